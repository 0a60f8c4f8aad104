// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/search_space.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "psnas/error.hpp"

namespace psnas {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames = {
    "sep_conv_1x1", "sep_conv_3x3", "sep_conv_5x5", "skip_connection", "zero"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& field, const std::string& msg) {
  throw ValidationError("genotype line " + std::to_string(line) + ", " + field + ": " + msg);
}

}  // namespace

std::string_view op_name(OpKind op) { return kOpNames.at(static_cast<std::size_t>(op)); }

OpKind op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumOps; ++i) {
    if (kOpNames[i] == name) return static_cast<OpKind>(i);
  }
  throw ValidationError("unknown operation '" + std::string(name) + "'");
}

int op_kernel_size(OpKind op) {
  switch (op) {
    case OpKind::kSepConv1x1: return 1;
    case OpKind::kSepConv3x3: return 3;
    case OpKind::kSepConv5x5: return 5;
    default: return 0;
  }
}

std::string_view cell_kind_name(CellKind kind) { return kind == CellKind::kNormal ? "normal" : "reduction"; }

std::string state_name(int state) {
  if (state < 0 || state >= static_cast<int>(kNumInputNodes + kNumIntermediateNodes)) {
    throw ValidationError("state index out of range: " + std::to_string(state));
  }
  if (state < static_cast<int>(kNumInputNodes)) return "input" + std::to_string(state);
  return "n" + std::to_string(state - static_cast<int>(kNumInputNodes));
}

int state_from_name(std::string_view name) {
  for (int s = 0; s < static_cast<int>(kNumInputNodes + kNumIntermediateNodes); ++s) {
    if (state_name(s) == name) return s;
  }
  throw ValidationError("unknown node '" + std::string(name) + "'");
}

std::size_t edge_index(int source, int node) {
  if (node < 0 || node >= static_cast<int>(kNumIntermediateNodes) || source < 0 ||
      source >= node + static_cast<int>(kNumInputNodes)) {
    throw ValidationError("no edge from state " + std::to_string(source) + " into node " + std::to_string(node));
  }
  // nodes before `node` contribute 2 + 3 + ... edges
  return static_cast<std::size_t>(node * (node + 3) / 2 + source);
}

template <typename T>
ArchParams<T> ArchParams<T>::random(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  auto draw = [&] {
    std::vector<T> v(kNumEdges * kNumOps);
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return ad::Tensor<T>::parameter({kNumEdges, kNumOps}, std::move(v));
  };
  ArchParams p;
  p.normal = draw();
  p.reduction = draw();
  return p;
}

template <typename T>
ArchParams<T> ArchParams<T>::constant(T value) {
  ArchParams p;
  p.normal = ad::Tensor<T>::parameter({kNumEdges, kNumOps}, std::vector<T>(kNumEdges * kNumOps, value));
  p.reduction = ad::Tensor<T>::parameter({kNumEdges, kNumOps}, std::vector<T>(kNumEdges * kNumOps, value));
  return p;
}

void validate_genotype(const Genotype& g) {
  for (CellKind kind : {CellKind::kNormal, CellKind::kReduction}) {
    const auto& cell = g.of(kind);
    for (int node = 0; node < static_cast<int>(kNumIntermediateNodes); ++node) {
      const auto& edges = cell[node];
      for (const auto& e : edges) {
        if (e.source < 0 || e.source >= node + static_cast<int>(kNumInputNodes)) {
          throw ValidationError(std::string(cell_kind_name(kind)) + " n" + std::to_string(node) +
                                ": source must be an earlier node");
        }
      }
      if (edges[0].source == edges[1].source) {
        throw ValidationError(std::string(cell_kind_name(kind)) + " n" + std::to_string(node) +
                              ": the two incoming edges must come from distinct nodes");
      }
    }
  }
  for (const auto& b : g.blocks) {
    if (b.name.empty() || b.cells.empty() ||
        b.cells.find_first_not_of("NR") != std::string::npos) {
      throw ValidationError("block layout '" + b.name + ":" + b.cells + "' is malformed");
    }
  }
}

CellGenotype discretize_cell(std::span<const double> alpha, bool exclude_zero) {
  if (alpha.size() != kNumEdges * kNumOps) throw ShapeError("discretize: expected 14x5 mixing weights");
  for (double a : alpha) {
    if (!std::isfinite(a)) throw NumericError("discretize: non-finite mixing weight");
  }
  CellGenotype cell{};
  for (int node = 0; node < static_cast<int>(kNumIntermediateNodes); ++node) {
    struct Candidate {
      int source;
      OpKind op;
      double strength;
    };
    std::vector<Candidate> cands;
    for (int src = 0; src < node + static_cast<int>(kNumInputNodes); ++src) {
      const double* row = alpha.data() + edge_index(src, node) * kNumOps;
      std::size_t best = kNumOps;
      for (std::size_t o = 0; o < kNumOps; ++o) {
        if (exclude_zero && static_cast<OpKind>(o) == OpKind::kZero) continue;
        if (best == kNumOps || row[o] > row[best]) best = o;
      }
      const double mx = *std::max_element(row, row + kNumOps);
      double z = 0;
      for (std::size_t o = 0; o < kNumOps; ++o) z += std::exp(row[o] - mx);
      cands.push_back({src, static_cast<OpKind>(best), std::exp(row[best] - mx) / z});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.strength > b.strength; });
    std::array<GenotypeEdge, kEdgesPerNode> kept{GenotypeEdge{cands[0].op, cands[0].source},
                                                 GenotypeEdge{cands[1].op, cands[1].source}};
    if (kept[0].source > kept[1].source) std::swap(kept[0], kept[1]);
    cell[node] = kept;
  }
  return cell;
}

template <typename T>
Genotype discretize(const ArchParams<T>& alpha, bool exclude_zero) {
  Genotype g;
  for (CellKind kind : {CellKind::kNormal, CellKind::kReduction}) {
    const auto& a = alpha.of(kind);
    if (!a.defined() || a.numel() != kNumEdges * kNumOps) throw ShapeError("discretize: bad mixing weight shape");
    std::vector<double> rows(a.data().begin(), a.data().end());
    g.of(kind) = discretize_cell(rows, exclude_zero);
  }
  return g;
}

std::string serialize_genotype(const Genotype& g) {
  std::ostringstream os;
  os << "genotype channels=" << g.channels << " blocks=";
  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    os << (i ? "," : "") << g.blocks[i].name << ':' << g.blocks[i].cells;
  }
  os << '\n';
  for (CellKind kind : {CellKind::kNormal, CellKind::kReduction}) {
    const auto& cell = g.of(kind);
    for (std::size_t node = 0; node < kNumIntermediateNodes; ++node) {
      os << cell_kind_name(kind) << " n" << node << ": ";
      for (std::size_t k = 0; k < kEdgesPerNode; ++k) {
        os << (k ? ", " : "") << op_name(cell[node][k].op) << '(' << state_name(cell[node][k].source) << ')';
      }
      os << '\n';
    }
  }
  return os.str();
}

Genotype parse_genotype(std::string_view text) {
  Genotype g;
  std::array<std::array<bool, kNumIntermediateNodes>, 2> seen{};
  bool header = false;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (line.empty() || line.front() == '#') continue;

    if (!header) {
      if (line.substr(0, 9) != "genotype ") parse_fail(lineno, "header", "expected 'genotype channels=.. blocks=..'");
      std::istringstream hs{std::string(line.substr(9))};
      std::string tok;
      bool have_channels = false, have_blocks = false;
      while (hs >> tok) {
        if (tok.rfind("channels=", 0) == 0) {
          try {
            g.channels = std::stoul(tok.substr(9));
          } catch (const std::exception&) {
            parse_fail(lineno, "channels", "not an integer");
          }
          if (g.channels == 0) parse_fail(lineno, "channels", "must be positive");
          have_channels = true;
        } else if (tok.rfind("blocks=", 0) == 0) {
          std::string_view rest = std::string_view(tok).substr(7);
          while (!rest.empty()) {
            const auto comma = rest.find(',');
            std::string_view item = rest.substr(0, comma);
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
            const auto colon = item.find(':');
            if (colon == std::string_view::npos) parse_fail(lineno, "blocks", "expected name:layout");
            BlockLayout b{std::string(item.substr(0, colon)), std::string(item.substr(colon + 1))};
            if (b.name.empty() || b.cells.empty() || b.cells.find_first_not_of("NR") != std::string::npos) {
              parse_fail(lineno, "blocks", "malformed layout '" + std::string(item) + "'");
            }
            g.blocks.push_back(std::move(b));
          }
          have_blocks = true;
        } else {
          parse_fail(lineno, "header", "unexpected token '" + tok + "'");
        }
      }
      if (!have_channels) parse_fail(lineno, "header", "missing channels=");
      if (!have_blocks) parse_fail(lineno, "header", "missing blocks=");
      header = true;
      continue;
    }

    const auto colon = line.find(':');
    if (colon == std::string_view::npos) parse_fail(lineno, "node", "expected '<kind> n<k>: op(src), op(src)'");
    std::istringstream ks{std::string(line.substr(0, colon))};
    std::string kind_s, node_s, extra;
    ks >> kind_s >> node_s;
    if (ks >> extra) parse_fail(lineno, "node", "unexpected token '" + extra + "'");
    CellKind kind;
    if (kind_s == "normal") {
      kind = CellKind::kNormal;
    } else if (kind_s == "reduction") {
      kind = CellKind::kReduction;
    } else {
      parse_fail(lineno, "kind", "expected normal or reduction, got '" + kind_s + "'");
    }
    int node_state = -1;
    try {
      node_state = state_from_name(node_s);
    } catch (const ValidationError&) {
      parse_fail(lineno, "node", "unknown node '" + node_s + "'");
    }
    if (node_state < static_cast<int>(kNumInputNodes)) parse_fail(lineno, "node", "inputs have no incoming edges");
    const int node = node_state - static_cast<int>(kNumInputNodes);
    auto& seen_flag = seen[kind == CellKind::kNormal ? 0 : 1][node];
    if (seen_flag) parse_fail(lineno, "node", "duplicate entry for " + kind_s + " " + node_s);
    seen_flag = true;

    std::vector<GenotypeEdge> edges;
    std::string_view rest = line.substr(colon + 1);
    std::size_t field = 0;
    while (!trim(rest).empty()) {
      ++field;
      const auto comma = rest.find(',');
      std::string_view item = trim(rest.substr(0, comma));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      const auto lp = item.find('('), rp = item.find(')');
      const std::string fname = "edge " + std::to_string(field);
      if (lp == std::string_view::npos || rp == std::string_view::npos || rp < lp || rp + 1 != item.size()) {
        parse_fail(lineno, fname, "expected op(source), got '" + std::string(item) + "'");
      }
      GenotypeEdge e;
      try {
        e.op = op_from_name(trim(item.substr(0, lp)));
        e.source = state_from_name(trim(item.substr(lp + 1, rp - lp - 1)));
      } catch (const ValidationError& err) {
        parse_fail(lineno, fname, err.what());
      }
      if (e.source >= node_state) parse_fail(lineno, fname, "source must precede " + node_s);
      edges.push_back(e);
    }
    if (edges.size() != kEdgesPerNode) {
      parse_fail(lineno, "edges", "expected exactly 2 incoming edges, got " + std::to_string(edges.size()));
    }
    if (edges[0].source == edges[1].source) parse_fail(lineno, "edges", "sources must be distinct");
    g.of(kind)[node] = {edges[0], edges[1]};
  }
  if (!header) throw ValidationError("genotype: missing header line");
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t n = 0; n < kNumIntermediateNodes; ++n)
      if (!seen[k][n]) {
        throw ValidationError("genotype: missing entry for " + std::string(k == 0 ? "normal" : "reduction") + " n" +
                              std::to_string(n));
      }
  return g;
}

Genotype all_skip_genotype(std::size_t channels, std::vector<BlockLayout> blocks) {
  Genotype g;
  g.channels = channels;
  g.blocks = std::move(blocks);
  for (CellKind kind : {CellKind::kNormal, CellKind::kReduction}) {
    for (auto& node : g.of(kind)) {
      node = {GenotypeEdge{OpKind::kSkipConnection, 0}, GenotypeEdge{OpKind::kSkipConnection, 1}};
    }
  }
  return g;
}

template struct ArchParams<float>;
template struct ArchParams<double>;
template Genotype discretize(const ArchParams<float>&, bool);
template Genotype discretize(const ArchParams<double>&, bool);

}  // namespace psnas
