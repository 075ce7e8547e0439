#include "rksa/embed.hpp"

#include <cmath>

namespace rksa {

namespace {

Matrix normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

}  // namespace

EmbeddingTables init_tables(std::size_t num_items, std::size_t max_len, std::size_t num_users,
                            std::size_t dim, Rng& rng) {
  if (dim == 0 || max_len == 0) throw ConfigError("embedding dim and max_len must be positive");
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  const auto d = static_cast<Index>(dim);
  Matrix item = normal_matrix(static_cast<Index>(num_items) + 1, d, stddev, rng);
  item.row(0).setZero();
  EmbeddingTables tables;
  tables.item = ad::parameter(std::move(item));
  tables.positional = ad::parameter(normal_matrix(static_cast<Index>(max_len), d, stddev, rng));
  tables.user = ad::parameter(normal_matrix(static_cast<Index>(num_users), d, stddev, rng));
  return tables;
}

ad::Var build_inputs(const EmbeddingTables& tables, std::span<const ItemId> ids, Index first_position) {
  const auto n = static_cast<Index>(ids.size());
  if (first_position < 0 || first_position + n > tables.max_len()) {
    throw ConfigError("build_inputs: " + std::to_string(n) + " positions from " +
                      std::to_string(first_position) + " exceed max_len " + std::to_string(tables.max_len()));
  }
  std::vector<Index> item_rows(ids.size());
  std::vector<Index> pos_rows(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] > tables.num_items()) {
      throw ConfigError("build_inputs: item id " + std::to_string(ids[t]) + " out of range");
    }
    item_rows[t] = ids[t];
    pos_rows[t] = first_position + static_cast<Index>(t);
  }
  return ad::add(ad::gather_rows(tables.item, item_rows), ad::gather_rows(tables.positional, pos_rows));
}

ad::Var lookup_user(const EmbeddingTables& tables, UserId user) {
  if (user < 0 || user >= tables.num_users()) {
    throw ConfigError("lookup_user: user id " + std::to_string(user) + " out of range");
  }
  const Index row[] = {user};
  return ad::gather_rows(tables.user, row);
}

void project_padding(EmbeddingTables& tables) {
  tables.item.mutable_value().row(0).setZero();
  if (tables.item.grad().size() != 0) tables.item.mutable_grad().row(0).setZero();
}

}  // namespace rksa
