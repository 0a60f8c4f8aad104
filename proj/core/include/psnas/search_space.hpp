// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_SEARCH_SPACE_HPP_
#define PSNAS_SEARCH_SPACE_HPP_

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psnas/tensor.hpp"

namespace psnas {

/// Candidate operations on a cell edge, in index order.
enum class OpKind : int {
  kSepConv1x1 = 0,
  kSepConv3x3 = 1,
  kSepConv5x5 = 2,
  kSkipConnection = 3,
  kZero = 4,
};

inline constexpr std::size_t kNumOps = 5;
inline constexpr std::size_t kNumInputNodes = 2;
inline constexpr std::size_t kNumIntermediateNodes = 4;
inline constexpr std::size_t kNumEdges = 14;  // 2 + 3 + 4 + 5
inline constexpr std::size_t kEdgesPerNode = 2;

std::string_view op_name(OpKind op);
OpKind op_from_name(std::string_view name);
int op_kernel_size(OpKind op);  // 0 for skip/zero

enum class CellKind { kNormal, kReduction };

std::string_view cell_kind_name(CellKind kind);

/// Cell states are numbered input0 = 0, input1 = 1, n0 = 2 ... n3 = 5.
std::string state_name(int state);
int state_from_name(std::string_view name);

/// Index of edge (source state -> intermediate node) in [0, kNumEdges).
std::size_t edge_index(int source, int node);

/// Per-edge operation mixing weights, shared by all cells of one kind.
template <typename T>
struct ArchParams {
  ad::Tensor<T> normal;     // [kNumEdges, kNumOps]
  ad::Tensor<T> reduction;  // [kNumEdges, kNumOps]

  /// Independent N(0, scale^2) draws, tracked as leaves.
  static ArchParams random(std::mt19937_64& rng, double scale = 1e-3);
  static ArchParams constant(T value);

  ad::Tensor<T>& of(CellKind kind) { return kind == CellKind::kNormal ? normal : reduction; }
  const ad::Tensor<T>& of(CellKind kind) const { return kind == CellKind::kNormal ? normal : reduction; }
};

struct GenotypeEdge {
  OpKind op = OpKind::kSkipConnection;
  int source = 0;  // state index, strictly earlier than the node

  bool operator==(const GenotypeEdge&) const = default;
};

using CellGenotype = std::array<std::array<GenotypeEdge, kEdgesPerNode>, kNumIntermediateNodes>;

struct BlockLayout {
  std::string name;
  std::string cells;  // sequence of 'N' / 'R'

  bool operator==(const BlockLayout&) const = default;
};

/// Discrete cell description for both cell kinds plus the network layout
/// it was searched for.
struct Genotype {
  CellGenotype normal{};
  CellGenotype reduction{};
  std::size_t channels = 0;
  std::vector<BlockLayout> blocks;

  const CellGenotype& of(CellKind kind) const { return kind == CellKind::kNormal ? normal : reduction; }
  CellGenotype& of(CellKind kind) { return kind == CellKind::kNormal ? normal : reduction; }

  bool operator==(const Genotype&) const = default;
};

/// Checks the two-distinct-earlier-sources rule for every node.
void validate_genotype(const Genotype& g);

/// Keeps, per edge, the argmax operation (zero excluded when exclude_zero)
/// and, per node, the two edges whose chosen operation carries the largest
/// softmax weight. Ties go to the lower operation index, then the lower
/// source index. Retained edges are listed in source order.
template <typename T>
Genotype discretize(const ArchParams<T>& alpha, bool exclude_zero = true);

CellGenotype discretize_cell(std::span<const double> alpha_rows, bool exclude_zero);

std::string serialize_genotype(const Genotype& g);
Genotype parse_genotype(std::string_view text);

/// Genotype whose every retained edge is a skip connection from input0 and input1.
Genotype all_skip_genotype(std::size_t channels, std::vector<BlockLayout> blocks);

extern template struct ArchParams<float>;
extern template struct ArchParams<double>;

}  // namespace psnas

#endif  // PSNAS_SEARCH_SPACE_HPP_
