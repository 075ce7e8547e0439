#pragma once

#include <span>

#include "rksa/autodiff.hpp"

namespace rksa {

/// Item, positional and user embeddings. Item row 0 is the padding row and
/// is kept at exactly zero.
struct EmbeddingTables {
  ad::Var item;        // [num_items + 1, dim]
  ad::Var positional;  // [max_len, dim]
  ad::Var user;        // [num_users, dim]

  Index dim() const { return item.cols(); }
  Index max_len() const { return positional.rows(); }
  Index num_items() const { return item.rows() - 1; }
  Index num_users() const { return user.rows(); }
};

/// Zero-mean normal initialization with standard deviation 1/sqrt(dim).
EmbeddingTables init_tables(std::size_t num_items, std::size_t max_len, std::size_t num_users,
                            std::size_t dim, Rng& rng);

/// X[t] = item[ids[t]] + positional[first_position + t].
ad::Var build_inputs(const EmbeddingTables& tables, std::span<const ItemId> ids,
                     Index first_position = 0);

/// The [1, dim] user row.
ad::Var lookup_user(const EmbeddingTables& tables, UserId user);

/// Forces the padding row (and its gradient, if any) back to zero.
void project_padding(EmbeddingTables& tables);

}  // namespace rksa
