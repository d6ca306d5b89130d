#pragma once

// Evidence network for one (endpoint, estimand) slice: treatments are
// nodes, each contrast is an edge. Parallel edges are kept.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "estnma/ingest.hpp"

namespace estnma {

struct NetworkEdge {
  std::string trial_id;
  std::string treatment;
  std::string comparator;
  std::size_t contrast_index;  // into the contrast span the network was built from
  double weight;               // 1 / se^2

  friend bool operator==(const NetworkEdge&, const NetworkEdge&) = default;
};

class EvidenceNetwork {
 public:
  EvidenceNetwork() = default;
  EvidenceNetwork(std::vector<std::string> nodes, std::vector<NetworkEdge> edges);

  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<NetworkEdge>& edges() const { return edges_; }
  const std::map<std::string, std::vector<std::string>>& trial_designs() const { return designs_; }

  bool contains(std::string_view treatment) const;
  /// Throws std::out_of_range for an unknown treatment.
  std::size_t index_of(std::string_view treatment) const;

  /// Copy without the edges contributed by `trial_id` (nodes are kept).
  EvidenceNetwork without_trial(std::string_view trial_id) const;

 private:
  std::vector<std::string> nodes_;
  std::vector<NetworkEdge> edges_;
  std::map<std::string, std::vector<std::string>> designs_;
};

/// Throws DataError on empty input or mixed endpoints.
EvidenceNetwork build_network(std::span<const ContrastEstimate> contrasts);

// Graph primitives on index pairs; the EvidenceNetwork overloads use these.
struct IndexEdge {
  std::size_t u;
  std::size_t v;
  double weight = 1.0;
};

std::vector<std::vector<std::size_t>> components_by_traversal(std::size_t n,
                                                               std::span<const IndexEdge> edges);
Eigen::MatrixXd weighted_laplacian(std::size_t n, std::span<const IndexEdge> edges);
/// Numerical rank via symmetric eigenvalues, threshold max|lambda| * n * 1e-12.
std::size_t laplacian_rank(std::size_t n, std::span<const IndexEdge> edges);
bool connected_by_traversal(std::size_t n, std::span<const IndexEdge> edges);
bool connected_by_laplacian(std::size_t n, std::span<const IndexEdge> edges);

std::vector<IndexEdge> index_edges(const EvidenceNetwork& net);
Eigen::MatrixXd weighted_laplacian(const EvidenceNetwork& net);

/// Both tests are run; disagreement (possible only when edge weights span
/// more than ~12 orders of magnitude) is a NumericalError.
bool is_connected(const EvidenceNetwork& net);

/// Components as treatment ids, each ordered by node order, components
/// ordered by their first node.
std::vector<std::vector<std::string>> connected_components(const EvidenceNetwork& net);

/// Shortest path by edge count, ties broken by node order then edge order.
/// nullopt when a and b are disconnected; throws std::out_of_range on an
/// unknown treatment.
std::optional<std::vector<NetworkEdge>> anchoring_path(const EvidenceNetwork& net, std::string_view a,
                                                       std::string_view b);

/// One edge per line: trial_id,treatment,comparator,weight.
void write_edge_list(const EvidenceNetwork& net, std::ostream& out);

}  // namespace estnma
