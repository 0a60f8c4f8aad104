// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_CELL_HPP_
#define PSNAS_CELL_HPP_

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "psnas/nn.hpp"
#include "psnas/search_space.hpp"

namespace psnas {

/// Softmax-relaxed mixing weights, one [kNumEdges, kNumOps] tensor per
/// cell kind. Child networks run with an empty instance.
template <typename T>
struct ArchWeights {
  ad::Tensor<T> normal;
  ad::Tensor<T> reduction;

  const ad::Tensor<T>& of(CellKind kind) const { return kind == CellKind::kNormal ? normal : reduction; }
  bool defined() const { return normal.defined() && reduction.defined(); }
};

template <typename T>
ArchWeights<T> relax(ad::Tape<T>& tape, const ArchParams<T>& alpha);

/// One candidate operation instantiated for an edge.
template <typename T>
class CandidateOp {
 public:
  CandidateOp(OpKind kind, std::size_t channels, int stride, bool affine, nn::Rng& rng);

  /// Undefined result for the zero operation. relu_x, when given, is
  /// relu(x), shared between the separable convolutions of one edge.
  ad::Tensor<T> forward(nn::Context<T>& ctx, const ad::Tensor<T>& x, const ad::Tensor<T>* relu_x = nullptr);
  void collect(nn::ParamSet<T>& out, const std::string& prefix) const;

  OpKind kind() const { return kind_; }
  int stride() const { return stride_; }

 private:
  OpKind kind_;
  int stride_;
  std::optional<nn::SepConv<T>> sep_;
  std::optional<nn::ConvBn<T>> skip_proj_;  // skip on stride-2 edges
};

/// Softmax-weighted sum of all candidate operations on one edge.
template <typename T>
class MixedEdge {
 public:
  MixedEdge(std::size_t channels, int stride, bool affine, nn::Rng& rng);

  ad::Tensor<T> forward(nn::Context<T>& ctx, const ad::Tensor<T>& x, const ad::Tensor<T>& weights, std::size_t row);
  void collect(nn::ParamSet<T>& out, const std::string& prefix) const;

  CandidateOp<T>& op(OpKind kind) { return ops_[static_cast<std::size_t>(kind)]; }

 private:
  std::vector<CandidateOp<T>> ops_;  // indexed by OpKind
};

struct CellOptions {
  CellKind kind = CellKind::kNormal;
  bool reduction_prev = false;
  std::size_t c_prev_prev = 0;
  std::size_t c_prev = 0;
  std::size_t channels = 0;
  bool affine = true;
};

/// Two input nodes, four intermediate nodes, output = channel concat of
/// the intermediate nodes. Either a supernet cell (all 14 mixed edges) or a
/// child cell (two fixed operations per node).
template <typename T>
class Cell {
 public:
  Cell(const CellOptions& opt, nn::Rng& rng);
  Cell(const CellOptions& opt, const CellGenotype& genotype, nn::Rng& rng);

  /// weights: relaxed mixing weights of this cell's kind; ignored (may be
  /// undefined) for child cells.
  ad::Tensor<T> forward(nn::Context<T>& ctx, const ad::Tensor<T>& s0, const ad::Tensor<T>& s1,
                        const ad::Tensor<T>& weights);
  void collect(nn::ParamSet<T>& out, const std::string& prefix) const;

  const CellOptions& options() const { return opt_; }
  std::size_t out_channels() const { return kNumIntermediateNodes * opt_.channels; }
  bool is_child() const { return genotype_.has_value(); }

  MixedEdge<T>& mixed_edge(std::size_t e) { return mixed_.at(e); }
  CandidateOp<T>& fixed_op(std::size_t node, std::size_t slot) { return fixed_.at(node * kEdgesPerNode + slot); }

 private:
  int edge_stride(int source) const;

  CellOptions opt_;
  nn::ConvBn<T> pre0_, pre1_;
  std::vector<MixedEdge<T>> mixed_;
  std::vector<CandidateOp<T>> fixed_;
  std::optional<CellGenotype> genotype_;
};

/// A searchable block: a sequence of normal ('N') and reduction ('R')
/// cells. Cell channels double at every reduction cell.
template <typename T>
class CellStack {
 public:
  /// genotype == nullptr builds supernet cells.
  CellStack(const std::string& layout, std::size_t in_channels, std::size_t start_channels, bool affine,
            const Genotype* genotype, nn::Rng& rng);

  ad::Tensor<T> forward(nn::Context<T>& ctx, const ad::Tensor<T>& s0, const ad::Tensor<T>& s1,
                        const ArchWeights<T>& weights);
  void collect(nn::ParamSet<T>& out, const std::string& prefix) const;

  std::size_t out_channels() const { return cells_.back().out_channels(); }
  std::size_t final_cell_channels() const { return cells_.back().options().channels; }
  std::size_t reductions() const { return reductions_; }
  std::size_t size() const { return cells_.size(); }
  Cell<T>& cell(std::size_t i) { return cells_.at(i); }

 private:
  std::vector<Cell<T>> cells_;
  std::size_t reductions_ = 0;
};

}  // namespace psnas

#endif  // PSNAS_CELL_HPP_
