#include "estnma/network.hpp"

#include <algorithm>
#include <deque>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "csv.hpp"
#include "estnma/errors.hpp"

namespace estnma {

EvidenceNetwork::EvidenceNetwork(std::vector<std::string> nodes, std::vector<NetworkEdge> edges)
    : nodes_(std::move(nodes)), edges_(std::move(edges)) {
  for (const auto& e : edges_) {
    if (!contains(e.treatment) || !contains(e.comparator)) {
      throw std::invalid_argument(fmt::format("edge {}-{} references an unknown node", e.treatment,
                                              e.comparator));
    }
    auto& arms = designs_[e.trial_id];
    for (const auto* t : {&e.treatment, &e.comparator}) {
      if (std::ranges::find(arms, *t) == arms.end()) arms.push_back(*t);
    }
  }
  for (auto& [trial, arms] : designs_) std::ranges::sort(arms);
}

bool EvidenceNetwork::contains(std::string_view treatment) const {
  return std::ranges::find(nodes_, treatment) != nodes_.end();
}

std::size_t EvidenceNetwork::index_of(std::string_view treatment) const {
  const auto it = std::ranges::find(nodes_, treatment);
  if (it == nodes_.end()) throw std::out_of_range(fmt::format("unknown treatment '{}'", treatment));
  return static_cast<std::size_t>(it - nodes_.begin());
}

EvidenceNetwork EvidenceNetwork::without_trial(std::string_view trial_id) const {
  std::vector<NetworkEdge> kept;
  for (const auto& e : edges_) {
    if (e.trial_id != trial_id) kept.push_back(e);
  }
  return EvidenceNetwork(nodes_, std::move(kept));
}

EvidenceNetwork build_network(std::span<const ContrastEstimate> contrasts) {
  if (contrasts.empty()) throw DataError("cannot build a network from zero contrasts");
  const std::string& endpoint = contrasts.front().endpoint;
  std::vector<std::string> nodes;
  std::vector<NetworkEdge> edges;
  auto add_node = [&nodes](const std::string& t) {
    if (std::ranges::find(nodes, t) == nodes.end()) nodes.push_back(t);
  };
  for (std::size_t i = 0; i < contrasts.size(); ++i) {
    const auto& c = contrasts[i];
    if (c.endpoint != endpoint) {
      throw DataError(fmt::format("contrasts mix endpoints '{}' and '{}'", endpoint, c.endpoint));
    }
    // both ends appear together: lexicographic tie-break
    const auto [first, second] = std::minmax(c.treatment, c.comparator);
    add_node(first);
    add_node(second);
    edges.push_back({c.trial_id, c.treatment, c.comparator, i, 1.0 / (c.se * c.se)});
  }
  return EvidenceNetwork(std::move(nodes), std::move(edges));
}

std::vector<std::vector<std::size_t>> components_by_traversal(std::size_t n,
                                                               std::span<const IndexEdge> edges) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& e : edges) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  std::vector<bool> seen(n, false);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<std::size_t> comp;
    std::vector<std::size_t> stack{s};
    seen[s] = true;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      comp.push_back(u);
      for (const std::size_t v : adj[u]) {
        if (!seen[v]) {
          seen[v] = true;
          stack.push_back(v);
        }
      }
    }
    std::ranges::sort(comp);
    out.push_back(std::move(comp));
  }
  return out;
}

Eigen::MatrixXd weighted_laplacian(std::size_t n, std::span<const IndexEdge> edges) {
  const auto size = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(size, size);
  for (const auto& e : edges) {
    const auto u = static_cast<Eigen::Index>(e.u);
    const auto v = static_cast<Eigen::Index>(e.v);
    if (u == v) continue;
    L(u, u) += e.weight;
    L(v, v) += e.weight;
    L(u, v) -= e.weight;
    L(v, u) -= e.weight;
  }
  return L;
}

std::size_t laplacian_rank(std::size_t n, std::span<const IndexEdge> edges) {
  if (n == 0) return 0;
  const Eigen::MatrixXd L = weighted_laplacian(n, edges);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(L, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double max_abs = lambda.cwiseAbs().maxCoeff();
  if (max_abs == 0.0) return 0;
  const double threshold = max_abs * static_cast<double>(n) * 1e-12;
  return static_cast<std::size_t>((lambda.array().abs() > threshold).count());
}

bool connected_by_traversal(std::size_t n, std::span<const IndexEdge> edges) {
  return components_by_traversal(n, edges).size() <= 1;
}

bool connected_by_laplacian(std::size_t n, std::span<const IndexEdge> edges) {
  if (n <= 1) return true;
  return laplacian_rank(n, edges) == n - 1;
}

std::vector<IndexEdge> index_edges(const EvidenceNetwork& net) {
  std::vector<IndexEdge> out;
  out.reserve(net.edges().size());
  for (const auto& e : net.edges()) {
    out.push_back({net.index_of(e.treatment), net.index_of(e.comparator), e.weight});
  }
  return out;
}

Eigen::MatrixXd weighted_laplacian(const EvidenceNetwork& net) {
  const auto edges = index_edges(net);
  return weighted_laplacian(net.nodes().size(), edges);
}

bool is_connected(const EvidenceNetwork& net) {
  const auto edges = index_edges(net);
  const std::size_t n = net.nodes().size();
  const bool by_traversal = connected_by_traversal(n, edges);
  const bool by_rank = connected_by_laplacian(n, edges);
  if (by_traversal != by_rank) {
    throw NumericalError(
        "connectivity tests disagree (traversal vs Laplacian rank); edge weights span too many orders of magnitude");
  }
  return by_traversal;
}

std::vector<std::vector<std::string>> connected_components(const EvidenceNetwork& net) {
  const auto edges = index_edges(net);
  std::vector<std::vector<std::string>> out;
  for (const auto& comp : components_by_traversal(net.nodes().size(), edges)) {
    std::vector<std::string> names;
    for (const std::size_t i : comp) names.push_back(net.nodes()[i]);
    out.push_back(std::move(names));
  }
  return out;
}

std::optional<std::vector<NetworkEdge>> anchoring_path(const EvidenceNetwork& net, std::string_view a,
                                                       std::string_view b) {
  const std::size_t src = net.index_of(a);
  const std::size_t dst = net.index_of(b);
  if (src == dst) return std::vector<NetworkEdge>{};

  const std::size_t n = net.nodes().size();
  // adjacency: (neighbour, edge index), sorted so BFS expands deterministically
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);
  for (std::size_t k = 0; k < net.edges().size(); ++k) {
    const auto& e = net.edges()[k];
    const std::size_t u = net.index_of(e.treatment);
    const std::size_t v = net.index_of(e.comparator);
    adj[u].emplace_back(v, k);
    adj[v].emplace_back(u, k);
  }
  for (auto& list : adj) std::ranges::sort(list);

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> via_edge(n, kNone);
  std::vector<std::size_t> parent(n, kNone);
  std::vector<bool> seen(n, false);
  std::deque<std::size_t> queue{src};
  seen[src] = true;
  while (!queue.empty() && !seen[dst]) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (const auto& [v, k] : adj[u]) {
      if (seen[v]) continue;
      seen[v] = true;
      parent[v] = u;
      via_edge[v] = k;
      queue.push_back(v);
    }
  }
  if (!seen[dst]) return std::nullopt;

  std::vector<NetworkEdge> path;
  for (std::size_t v = dst; v != src; v = parent[v]) path.push_back(net.edges()[via_edge[v]]);
  std::ranges::reverse(path);
  return path;
}

void write_edge_list(const EvidenceNetwork& net, std::ostream& out) {
  out << "trial_id,treatment,comparator,weight\n";
  for (const auto& e : net.edges()) {
    out << csv::quote_field(e.trial_id) << ',' << csv::quote_field(e.treatment) << ','
        << csv::quote_field(e.comparator) << ',' << fmt::format("{}", e.weight) << '\n';
  }
}

}  // namespace estnma
