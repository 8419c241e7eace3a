#include "pvgc/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "pvgc/autodiff.hpp"
#include "pvgc/detail/format.hpp"
#include "pvgc/ops.hpp"

namespace pvgc {

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Tensor stack_batch(const Dataset& data, const std::vector<std::size_t>& indices, bool augment_images,
                   std::uint64_t seed, std::uint64_t epoch, std::vector<std::size_t>& labels) {
  const std::size_t s = data.image_size();
  const std::size_t per = 3 * s * s;
  std::vector<double> values(indices.size() * per);
  labels.clear();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    Sample sample = data.get(indices[b]);
    if (sample.image.shape() != Shape{3, s, s}) {
      throw DataError("sample " + sample.id + " has shape " + shape_str(sample.image.shape()) + ", expected 3×" +
                      std::to_string(s) + "×" + std::to_string(s));
    }
    if (augment_images) {
      auto rng = sample_rng(seed, epoch, sample.id);
      sample = augment(sample, rng);
    }
    auto v = sample.image.values();
    std::copy(v.begin(), v.end(), values.begin() + static_cast<long>(b * per));
    labels.push_back(sample.label);
  }
  round_to_precision(values);
  return Tensor({indices.size(), 3, s, s}, std::move(values));
}

MetricsReport evaluate(Model& model, const Dataset& data, std::size_t batch_size, LossKind loss,
                       const MarginParams& margin) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  const LossKind kind = resolve_loss(loss, model.config().head);
  NoGradScope no_grad;
  ForwardContext ctx{NormMode::eval, false, nullptr};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> truth, predicted, labels;
  double loss_sum = 0.0;
  for (const auto& batch : make_batches(order, batch_size)) {
    Tensor images = stack_batch(data, batch, false, 0, 0, labels);
    ModelOutput out = model.forward(images, ctx);
    loss_sum += model_loss(out, labels, kind, margin).item() * static_cast<double>(batch.size());
    auto preds = predict(out.scores);
    truth.insert(truth.end(), labels.begin(), labels.end());
    predicted.insert(predicted.end(), preds.begin(), preds.end());
  }
  MetricsReport report = metrics_from_predictions(truth, predicted, model.config().classes);
  report.loss = loss_sum / static_cast<double>(data.size());
  report.has_loss = true;
  return report;
}

TrainResult train(Model& model, const Dataset& train_data, const Dataset* val, const TrainConfig& config,
                  const std::string& metadata, const EpochCallback& on_epoch) {
  config.validate();
  if (train_data.size() < 2) throw DataError("training needs at least 2 samples");
  if (train_data.image_size() != model.config().height || model.config().height != model.config().width) {
    throw DataError("dataset images are " + std::to_string(train_data.image_size()) + " pixels, model expects " +
                    std::to_string(model.config().height) + "×" + std::to_string(model.config().width));
  }
  PrecisionScope precision_scope(config.precision);
  const LossKind kind = resolve_loss(config.loss, model.config().head);
  const std::vector<Tensor> params = model.parameters();
  OptState opt = OptState::fresh(params);
  const std::string rng_state = "seed=" + std::to_string(config.seed);

  TrainResult result;
  result.best = capture(model, &opt, 0, rng_state, metadata);
  bool have_best = false;

  std::vector<std::size_t> labels;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.lr = lr_at(static_cast<double>(e), config);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    const auto batches = make_batches(epoch_order(train_data.size(), config.seed, e), config.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      GradStore grads;
      double batch_loss = 0.0;
      std::vector<std::size_t> preds;
      try {
        Tensor images = stack_batch(train_data, batch, config.augment, config.seed, e, labels);
        Tape tape;
        TapeScope scope(tape);
        ModelOutput out = model.forward(images, ForwardContext{NormMode::train, true, nullptr});
        Tensor loss = model_loss(out, labels, kind, config.margin);
        batch_loss = loss.item();
        if (!std::isfinite(batch_loss)) throw NumericError("loss is not finite");
        preds = predict(out.scores);
        grads = backward(loss);
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(e + 1) + ", batch " +
                           std::to_string(bi + 1) + ": " + err.what());
      }
      std::vector<Tensor> g;
      g.reserve(params.size());
      for (const auto& p : params) g.push_back(grads.grad(p));
      adamw_step(params, g, opt, rec.lr, config.adamw);
      loss_sum += batch_loss * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
      seen += batch.size();
    }
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    double score = rec.train_acc;
    if (val != nullptr && val->size() > 0) {
      try {
        MetricsReport m = evaluate(model, *val, config.batch_size, kind, config.margin);
        rec.val_loss = m.loss;
        rec.val_acc = m.accuracy;
      } catch (const NumericError& err) {
        throw NumericError("validation diverged after epoch " + std::to_string(e + 1) + ": " + err.what());
      }
      score = rec.val_acc;
    }
    if (!have_best || score > result.best_acc) {
      have_best = true;
      result.best_acc = score;
      result.best_epoch = rec.epoch;
      result.best = capture(model, &opt, rec.epoch, rng_state, metadata);
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::string history_tsv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n";
  for (const auto& r : history) {
    out << r.epoch;
    for (double v : {r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc}) out << '\t' << detail::real_text(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace pvgc
