// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/cell.hpp"

#include "psnas/error.hpp"

namespace psnas {

template <typename T>
ArchWeights<T> relax(ad::Tape<T>& tape, const ArchParams<T>& alpha) {
  return ArchWeights<T>{ad::softmax_rows(tape, alpha.normal), ad::softmax_rows(tape, alpha.reduction)};
}

// ---- CandidateOp ----

template <typename T>
CandidateOp<T>::CandidateOp(OpKind kind, std::size_t channels, int stride, bool affine, nn::Rng& rng)
    : kind_(kind), stride_(stride) {
  switch (kind) {
    case OpKind::kSepConv1x1:
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5:
      sep_.emplace(channels, channels, op_kernel_size(kind), stride, affine, rng);
      break;
    case OpKind::kSkipConnection:
      if (stride != 1) {
        skip_proj_.emplace(typename nn::ConvBn<T>::Options{channels, channels, 1, stride, affine, false, false}, rng);
      }
      break;
    case OpKind::kZero:
      break;
  }
}

template <typename T>
ad::Tensor<T> CandidateOp<T>::forward(nn::Context<T>& ctx, const ad::Tensor<T>& x, const ad::Tensor<T>* relu_x) {
  switch (kind_) {
    case OpKind::kSepConv1x1:
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5:
      return relu_x ? sep_->forward_activated(ctx, *relu_x) : sep_->forward(ctx, x);
    case OpKind::kSkipConnection:
      return skip_proj_ ? skip_proj_->forward(ctx, x) : x;
    case OpKind::kZero:
      break;
  }
  return {};
}

template <typename T>
void CandidateOp<T>::collect(nn::ParamSet<T>& out, const std::string& prefix) const {
  const std::string p = prefix + "." + std::string(op_name(kind_));
  if (sep_) sep_->collect(out, p);
  if (skip_proj_) skip_proj_->collect(out, p);
}

// ---- MixedEdge ----

template <typename T>
MixedEdge<T>::MixedEdge(std::size_t channels, int stride, bool affine, nn::Rng& rng) {
  ops_.reserve(kNumOps);
  for (std::size_t o = 0; o < kNumOps; ++o) ops_.emplace_back(static_cast<OpKind>(o), channels, stride, affine, rng);
}

template <typename T>
ad::Tensor<T> MixedEdge<T>::forward(nn::Context<T>& ctx, const ad::Tensor<T>& x, const ad::Tensor<T>& weights,
                                    std::size_t row) {
  const ad::Tensor<T> relu_x = ad::relu(ctx.tape, x);
  std::vector<ad::Tensor<T>> outs;
  outs.reserve(kNumOps);
  for (auto& op : ops_) outs.push_back(op.forward(ctx, x, &relu_x));
  return ad::mix<T>(ctx.tape, outs, weights, row);
}

template <typename T>
void MixedEdge<T>::collect(nn::ParamSet<T>& out, const std::string& prefix) const {
  for (const auto& op : ops_) op.collect(out, prefix);
}

// ---- Cell ----

namespace {

template <typename T>
nn::ConvBn<T> make_preprocess(std::size_t in, std::size_t out, int stride, bool affine, nn::Rng& rng) {
  return nn::ConvBn<T>(typename nn::ConvBn<T>::Options{in, out, 1, stride, affine, true, false}, rng);
}

}  // namespace

template <typename T>
Cell<T>::Cell(const CellOptions& opt, nn::Rng& rng)
    : opt_(opt),
      pre0_(make_preprocess<T>(opt.c_prev_prev, opt.channels, opt.reduction_prev ? 2 : 1, opt.affine, rng)),
      pre1_(make_preprocess<T>(opt.c_prev, opt.channels, 1, opt.affine, rng)) {
  mixed_.reserve(kNumEdges);
  for (int node = 0; node < static_cast<int>(kNumIntermediateNodes); ++node) {
    for (int src = 0; src < node + static_cast<int>(kNumInputNodes); ++src) {
      mixed_.emplace_back(opt.channels, edge_stride(src), opt.affine, rng);
    }
  }
}

template <typename T>
Cell<T>::Cell(const CellOptions& opt, const CellGenotype& genotype, nn::Rng& rng)
    : opt_(opt),
      pre0_(make_preprocess<T>(opt.c_prev_prev, opt.channels, opt.reduction_prev ? 2 : 1, opt.affine, rng)),
      pre1_(make_preprocess<T>(opt.c_prev, opt.channels, 1, opt.affine, rng)),
      genotype_(genotype) {
  fixed_.reserve(kNumIntermediateNodes * kEdgesPerNode);
  for (int node = 0; node < static_cast<int>(kNumIntermediateNodes); ++node) {
    for (const auto& e : genotype[node]) {
      if (e.source < 0 || e.source >= node + static_cast<int>(kNumInputNodes)) {
        throw ValidationError("cell genotype: source of n" + std::to_string(node) + " must be an earlier node");
      }
      fixed_.emplace_back(e.op, opt.channels, edge_stride(e.source), opt.affine, rng);
    }
  }
}

template <typename T>
int Cell<T>::edge_stride(int source) const {
  return opt_.kind == CellKind::kReduction && source < static_cast<int>(kNumInputNodes) ? 2 : 1;
}

template <typename T>
ad::Tensor<T> Cell<T>::forward(nn::Context<T>& ctx, const ad::Tensor<T>& s0, const ad::Tensor<T>& s1,
                               const ad::Tensor<T>& weights) {
  std::vector<ad::Tensor<T>> states;
  states.reserve(kNumInputNodes + kNumIntermediateNodes);
  states.push_back(pre0_.forward(ctx, s0));
  states.push_back(pre1_.forward(ctx, s1));
  const auto& a = states[0].shape();
  const auto& b = states[1].shape();
  if (a[0] != b[0] || a[2] != b[2] || a[3] != b[3]) {
    throw ShapeError("cell: spatial mismatch after preprocessing " + ad::shape_str(a) + " vs " + ad::shape_str(b));
  }
  if (!is_child() && (!weights.defined() || weights.dim(0) != kNumEdges || weights.dim(1) != kNumOps)) {
    throw ShapeError("cell: supernet cell needs [14,5] mixing weights");
  }
  const std::size_t stride = opt_.kind == CellKind::kReduction ? 2 : 1;
  const ad::Shape node_shape{b[0], opt_.channels, (b[2] + stride - 1) / stride, (b[3] + stride - 1) / stride};

  for (int node = 0; node < static_cast<int>(kNumIntermediateNodes); ++node) {
    ad::Tensor<T> acc;
    auto accumulate = [&](ad::Tensor<T> t) {
      if (!t.defined()) return;
      acc = acc.defined() ? ad::add(ctx.tape, acc, t) : t;
    };
    if (is_child()) {
      for (std::size_t slot = 0; slot < kEdgesPerNode; ++slot) {
        const int src = (*genotype_)[node][slot].source;
        accumulate(fixed_op(node, slot).forward(ctx, states[src]));
      }
    } else {
      for (int src = 0; src < node + static_cast<int>(kNumInputNodes); ++src) {
        const std::size_t e = edge_index(src, node);
        accumulate(mixed_[e].forward(ctx, states[src], weights, e));
      }
    }
    if (!acc.defined()) acc = ad::Tensor<T>(node_shape);
    states.push_back(std::move(acc));
  }
  return ad::concat_channels<T>(ctx.tape, std::span<const ad::Tensor<T>>(states).subspan(kNumInputNodes));
}

template <typename T>
void Cell<T>::collect(nn::ParamSet<T>& out, const std::string& prefix) const {
  pre0_.collect(out, prefix + ".pre0");
  pre1_.collect(out, prefix + ".pre1");
  if (is_child()) {
    for (std::size_t node = 0; node < kNumIntermediateNodes; ++node)
      for (std::size_t slot = 0; slot < kEdgesPerNode; ++slot)
        fixed_[node * kEdgesPerNode + slot].collect(
            out, prefix + ".n" + std::to_string(node) + ".e" + std::to_string(slot));
  } else {
    for (std::size_t e = 0; e < mixed_.size(); ++e) mixed_[e].collect(out, prefix + ".edge" + std::to_string(e));
  }
}

// ---- CellStack ----

template <typename T>
CellStack<T>::CellStack(const std::string& layout, std::size_t in_channels, std::size_t start_channels, bool affine,
                        const Genotype* genotype, nn::Rng& rng) {
  if (layout.empty() || layout.find_first_not_of("NR") != std::string::npos) {
    throw ValidationError("block layout '" + layout + "' must be a non-empty sequence of N and R");
  }
  std::size_t c_pp = in_channels, c_p = in_channels, c = start_channels;
  bool reduction_prev = false;
  cells_.reserve(layout.size());
  for (char kind_c : layout) {
    const CellKind kind = kind_c == 'R' ? CellKind::kReduction : CellKind::kNormal;
    if (kind == CellKind::kReduction) {
      c *= 2;
      ++reductions_;
    }
    const CellOptions opt{kind, reduction_prev, c_pp, c_p, c, affine};
    if (genotype) {
      cells_.emplace_back(opt, genotype->of(kind), rng);
    } else {
      cells_.emplace_back(opt, rng);
    }
    reduction_prev = kind == CellKind::kReduction;
    c_pp = c_p;
    c_p = cells_.back().out_channels();
  }
}

template <typename T>
ad::Tensor<T> CellStack<T>::forward(nn::Context<T>& ctx, const ad::Tensor<T>& s0, const ad::Tensor<T>& s1,
                                    const ArchWeights<T>& weights) {
  ad::Tensor<T> prev_prev = s0, prev = s1;
  static const ad::Tensor<T> kNone;
  for (auto& cell : cells_) {
    const ad::Tensor<T>& w = weights.defined() ? weights.of(cell.options().kind) : kNone;
    ad::Tensor<T> out = cell.forward(ctx, prev_prev, prev, w);
    prev_prev = std::move(prev);
    prev = std::move(out);
  }
  return prev;
}

template <typename T>
void CellStack<T>::collect(nn::ParamSet<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i].collect(out, prefix + ".cell" + std::to_string(i));
}

#define PSNAS_INSTANTIATE_CELL(T)                                                \
  template ArchWeights<T> relax(ad::Tape<T>&, const ArchParams<T>&);            \
  template class CandidateOp<T>;                                                 \
  template class MixedEdge<T>;                                                   \
  template class Cell<T>;                                                        \
  template class CellStack<T>;

PSNAS_INSTANTIATE_CELL(float)
PSNAS_INSTANTIATE_CELL(double)

}  // namespace psnas
