// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "psnas/cell.hpp"
#include "psnas/error.hpp"
#include "psnas/search_space.hpp"

namespace psnas {
namespace {

using Rows = std::vector<double>;

std::vector<BlockLayout> default_blocks() { return {{"encoder", "NRN"}, {"decoder", "NN"}}; }

Rows zero_rows() { return Rows(kNumEdges * kNumOps, 0.0); }

void set(Rows& r, int source, int node, OpKind op, double v) {
  r[edge_index(source, node) * kNumOps + static_cast<std::size_t>(op)] = v;
}

Genotype random_genotype(std::mt19937_64& rng) {
  Genotype g;
  g.channels = 1 + rng() % 64;
  g.blocks = default_blocks();
  for (CellKind kind : {CellKind::kNormal, CellKind::kReduction}) {
    for (int node = 0; node < static_cast<int>(kNumIntermediateNodes); ++node) {
      const int states = node + static_cast<int>(kNumInputNodes);
      const int a = static_cast<int>(rng() % states);
      int b = static_cast<int>(rng() % (states - 1));
      if (b >= a) ++b;
      g.of(kind)[node] = {GenotypeEdge{static_cast<OpKind>(rng() % kNumOps), std::min(a, b)},
                          GenotypeEdge{static_cast<OpKind>(rng() % kNumOps), std::max(a, b)}};
    }
  }
  return g;
}

TEST(SearchSpace, EdgeIndexEnumeratesAllFourteenEdges) {
  std::vector<bool> seen(kNumEdges, false);
  for (int node = 0; node < 4; ++node)
    for (int src = 0; src < node + 2; ++src) {
      const auto e = edge_index(src, node);
      ASSERT_LT(e, kNumEdges);
      EXPECT_FALSE(seen[e]);
      seen[e] = true;
    }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  EXPECT_THROW(edge_index(2, 0), ValidationError);
  EXPECT_THROW(edge_index(0, 4), ValidationError);
}

TEST(SearchSpace, NamesRoundTrip) {
  for (std::size_t o = 0; o < kNumOps; ++o) {
    EXPECT_EQ(op_from_name(op_name(static_cast<OpKind>(o))), static_cast<OpKind>(o));
  }
  for (int s = 0; s < 6; ++s) EXPECT_EQ(state_from_name(state_name(s)), s);
  EXPECT_THROW(op_from_name("max_pool_3x3"), ValidationError);
  EXPECT_THROW(state_from_name("n4"), ValidationError);
}

TEST(Relax, ZeroParamsGiveUniformWeights) {
  ad::Tape<double> tape(false);
  const auto w = relax(tape, ArchParams<double>::constant(0.0));
  ASSERT_TRUE(w.defined());
  for (double v : w.normal.data()) EXPECT_NEAR(v, 0.2, 1e-15);
  for (double v : w.reduction.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Relax, RowsSumToOneAndAreShiftInvariant) {
  std::mt19937_64 rng(3);
  auto alpha = ArchParams<double>::random(rng, 2.0);
  ArchParams<double> shifted{alpha.normal.clone(), alpha.reduction.clone()};
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    const double c = 10.0 * static_cast<double>(e) - 40.0;
    for (std::size_t o = 0; o < kNumOps; ++o) shifted.normal[e * kNumOps + o] += c;
  }
  ad::Tape<double> tape(false);
  const auto a = relax(tape, alpha);
  const auto b = relax(tape, shifted);
  for (std::size_t e = 0; e < kNumEdges; ++e) {
    double total = 0;
    for (std::size_t o = 0; o < kNumOps; ++o) {
      total += a.normal[e * kNumOps + o];
      EXPECT_NEAR(a.normal[e * kNumOps + o], b.normal[e * kNumOps + o], 1e-12);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  const Genotype ga = discretize(alpha), gb = discretize(shifted);
  EXPECT_EQ(ga.normal, gb.normal);
}

TEST(Discretize, OneHotRowsPickTheHotOperation) {
  Rows r = zero_rows();
  // node 0: input0 -> sep5x5, input1 -> skip. node 1: n0 -> sep3x3, input0 -> sep1x1.
  set(r, 0, 0, OpKind::kSepConv5x5, 5);
  set(r, 1, 0, OpKind::kSkipConnection, 4);
  set(r, 2, 1, OpKind::kSepConv3x3, 6);
  set(r, 0, 1, OpKind::kSepConv1x1, 3);
  const CellGenotype c = discretize_cell(r, true);
  EXPECT_EQ(c[0][0], (GenotypeEdge{OpKind::kSepConv5x5, 0}));
  EXPECT_EQ(c[0][1], (GenotypeEdge{OpKind::kSkipConnection, 1}));
  EXPECT_EQ(c[1][0], (GenotypeEdge{OpKind::kSepConv1x1, 0}));
  EXPECT_EQ(c[1][1], (GenotypeEdge{OpKind::kSepConv3x3, 2}));
}

TEST(Discretize, TiesGoToLowestOperationAndSources) {
  const CellGenotype c = discretize_cell(zero_rows(), true);
  for (const auto& node : c) {
    EXPECT_EQ(node[0], (GenotypeEdge{OpKind::kSepConv1x1, 0}));
    EXPECT_EQ(node[1], (GenotypeEdge{OpKind::kSepConv1x1, 1}));
  }
}

TEST(Discretize, ZeroDominatedEdgeKeepsRunnerUp) {
  Rows r = zero_rows();
  set(r, 0, 0, OpKind::kZero, 10);
  set(r, 0, 0, OpKind::kSepConv3x3, 2);
  EXPECT_EQ(discretize_cell(r, true)[0][0].op, OpKind::kSepConv3x3);
  // Without exclusion the zero op may be kept.
  EXPECT_EQ(discretize_cell(r, false)[0][0].op, OpKind::kZero);
}

TEST(Discretize, StrengthRanksEdgesAcrossSources) {
  Rows r = zero_rows();
  set(r, 3, 2, OpKind::kSepConv3x3, 8);  // n1 -> n2
  set(r, 1, 2, OpKind::kSkipConnection, 6);
  set(r, 0, 2, OpKind::kSepConv5x5, 1);
  const auto node = discretize_cell(r, true)[2];
  EXPECT_EQ(node[0], (GenotypeEdge{OpKind::kSkipConnection, 1}));
  EXPECT_EQ(node[1], (GenotypeEdge{OpKind::kSepConv3x3, 3}));
}

TEST(Discretize, PropertyTwoDistinctEarlierSources) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto alpha = ArchParams<double>::random(rng, 1.0 + trial % 5);
    for (bool exclude : {true, false}) {
      Genotype g = discretize(alpha, exclude);
      g.channels = 8;
      g.blocks = default_blocks();
      EXPECT_NO_THROW(validate_genotype(g));
      for (CellKind kind : {CellKind::kNormal, CellKind::kReduction})
        for (int node = 0; node < 4; ++node) {
          const auto& e = g.of(kind)[node];
          EXPECT_LT(e[0].source, e[1].source);
          EXPECT_LT(e[1].source, node + 2);
          if (exclude) {
            EXPECT_NE(e[0].op, OpKind::kZero);
            EXPECT_NE(e[1].op, OpKind::kZero);
          }
        }
    }
  }
}

TEST(Discretize, RejectsBadInput) {
  EXPECT_THROW(discretize_cell(Rows(10, 0.0), true), ShapeError);
  Rows r = zero_rows();
  r[7] = std::nan("");
  EXPECT_THROW(discretize_cell(r, true), NumericError);
}

TEST(GenotypeText, RoundTripsRandomGenotypes) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Genotype g = random_genotype(rng);
    const std::string text = serialize_genotype(g);
    const Genotype back = parse_genotype(text);
    EXPECT_EQ(back, g);
    EXPECT_EQ(serialize_genotype(back), text);
  }
}

TEST(GenotypeText, AllSkipGenotype) {
  const Genotype g = all_skip_genotype(16, default_blocks());
  EXPECT_NO_THROW(validate_genotype(g));
  for (CellKind kind : {CellKind::kNormal, CellKind::kReduction})
    for (const auto& node : g.of(kind)) {
      EXPECT_EQ(node[0], (GenotypeEdge{OpKind::kSkipConnection, 0}));
      EXPECT_EQ(node[1], (GenotypeEdge{OpKind::kSkipConnection, 1}));
    }
  EXPECT_EQ(parse_genotype(serialize_genotype(g)), g);
}

TEST(GenotypeText, FormatIsLineOriented) {
  const std::string text = serialize_genotype(all_skip_genotype(4, {{"b", "NR"}}));
  EXPECT_EQ(text.rfind("genotype channels=4 blocks=b:NR\n", 0), 0u);
  EXPECT_NE(text.find("normal n0: skip_connection(input0), skip_connection(input1)\n"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
}

TEST(GenotypeText, RejectsMalformedInput) {
  const std::string good = serialize_genotype(all_skip_genotype(4, {{"b", "NR"}}));
  auto replace = [&](const std::string& from, const std::string& to) {
    std::string t = good;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  EXPECT_THROW(parse_genotype(replace("normal n1: skip_connection(input0), skip_connection(input1)",
                                      "normal n1: skip_connection(input0), skip_connection(input1), skip_connection(n0)")),
               ValidationError);
  EXPECT_THROW(parse_genotype(replace("normal n0: skip_connection(input0)", "normal n0: skip_connection(n0)")),
               ValidationError);
  EXPECT_THROW(parse_genotype(replace("normal n2: skip_connection(input0)", "normal n2: skip_connection(input1)")),
               ValidationError);
  EXPECT_THROW(parse_genotype(replace("blocks=b:NR", "blocks=b:NX")), ValidationError);
  EXPECT_THROW(parse_genotype(replace("channels=4 ", "")), ValidationError);
  EXPECT_THROW(parse_genotype(replace("reduction n3: skip_connection(input0), skip_connection(input1)\n", "")),
               ValidationError);
  EXPECT_THROW(parse_genotype(""), ValidationError);
}

}  // namespace
}  // namespace psnas
