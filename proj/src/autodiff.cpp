#include "pvgc/autodiff.hpp"

#include <algorithm>
#include <atomic>

namespace pvgc {

namespace {

std::atomic<std::uint64_t> g_next_serial{1};
thread_local Tape* t_active = nullptr;

void accumulate(Tensor& slot, const Tensor& g) {
  if (!slot.defined()) {
    slot = Tensor(g.shape(), std::vector<double>(g.values().begin(), g.values().end()));
    return;
  }
  auto dst = slot.mutable_values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tape::Tape() : serial_(g_next_serial.fetch_add(1)) {}

NodeId Tape::node_of(const Tensor& t) const {
  if (!t.defined()) return kConstantNode;
  const auto& impl = t.impl();
  if (!impl.leaf) return impl.tape_serial == serial_ ? impl.node : kConstantNode;
  auto it = leaves_.find(&impl);
  return it == leaves_.end() ? kConstantNode : it->second;
}

bool Tape::participates(const Tensor& t) const {
  if (!t.defined()) return false;
  const auto& impl = t.impl();
  if (impl.leaf) return impl.requires_grad;
  return impl.tape_serial == serial_;
}

NodeId Tape::track(const Tensor& input) {
  if (!participates(input)) return kConstantNode;
  const auto& impl = input.impl();
  if (!impl.leaf) return impl.node;
  auto [it, inserted] = leaves_.try_emplace(&impl, records_.size());
  if (inserted) {
    records_.push_back(TapeRecord{"leaf", {}, impl.shape, {}});
    leaf_refs_.push_back(input);
  }
  return it->second;
}

void Tape::attach(Tensor& output, std::string_view kind, std::span<const Tensor* const> inputs,
                  BackwardFn backward) {
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor* in : inputs) ids.push_back(in ? track(*in) : kConstantNode);
  auto& impl = output.impl();
  impl.leaf = false;
  impl.requires_grad = true;
  impl.tape_serial = serial_;
  impl.node = records_.size();
  records_.push_back(TapeRecord{kind, std::move(ids), impl.shape, std::move(backward)});
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active) { t_active = &tape; }
TapeScope::~TapeScope() { t_active = previous_; }

NoGradScope::NoGradScope() : previous_(t_active) { t_active = nullptr; }
NoGradScope::~NoGradScope() { t_active = previous_; }

Tape* active_tape() { return t_active; }

Tensor GradStore::grad(const Tensor& t) const {
  NodeId id = kConstantNode;
  const auto& impl = t.impl();
  if (!impl.leaf) {
    if (impl.tape_serial == serial_) id = impl.node;
  } else if (auto it = leaves_.find(&impl); it != leaves_.end()) {
    id = it->second;
  }
  if (id == kConstantNode || id >= grads_.size() || !grads_[id].defined()) {
    return Tensor::zeros(t.shape());
  }
  return grads_[id];
}

bool GradStore::has(const Tensor& t) const {
  const auto& impl = t.impl();
  NodeId id = kConstantNode;
  if (!impl.leaf) {
    if (impl.tape_serial == serial_) id = impl.node;
  } else if (auto it = leaves_.find(&impl); it != leaves_.end()) {
    id = it->second;
  }
  return id != kConstantNode && id < grads_.size() && grads_[id].defined();
}

GradStore backward(const Tensor& root) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw ContractError("backward() requires an active tape");
  if (root.numel() != 1) {
    throw ContractError("backward() root must be scalar, got shape " + shape_str(root.shape()));
  }
  NodeId root_id = tape->node_of(root);
  if (root_id == kConstantNode) throw ContractError("backward() root is not recorded on the active tape");

  GradStore store;
  store.serial_ = tape->serial_;
  store.leaves_ = tape->leaves_;
  store.leaf_refs_ = tape->leaf_refs_;
  store.grads_.resize(tape->records_.size());
  store.grads_[root_id] = Tensor::full(root.shape(), 1.0);

  NoGradScope no_grad;
  for (NodeId id = root_id + 1; id-- > 0;) {
    const auto& rec = tape->records_[id];
    if (!rec.backward || !store.grads_[id].defined()) continue;
    auto input_grads = rec.backward(store.grads_[id]);
    for (std::size_t k = 0; k < rec.inputs.size() && k < input_grads.size(); ++k) {
      NodeId in = rec.inputs[k];
      if (in == kConstantNode || !input_grads[k].defined()) continue;
      if (input_grads[k].shape() != tape->records_[in].shape) {
        throw ContractError(std::string("backward rule of '") + std::string(rec.kind) +
                            "' produced gradient of shape " + shape_str(input_grads[k].shape()) +
                            " for input of shape " + shape_str(tape->records_[in].shape));
      }
      accumulate(store.grads_[in], input_grads[k]);
    }
  }
  return store;
}

}  // namespace pvgc
