#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/linalg.hpp"

#include <string>
#include <vector>

namespace synthsel {

/// Treated outcome and donor panel, split at the treatment time.
struct PanelDataset {
  VectorXd Y;       ///< pre-treatment treated outcome, length n
  MatrixXd X;       ///< pre-treatment donors, n x p
  VectorXd Z;       ///< treated covariates, empty when absent
  MatrixXd D;       ///< donor covariates, n_cov x p
  VectorXd post_Y;  ///< post-treatment treated outcome, may be empty
  MatrixXd post_X;  ///< post-treatment donors, may be empty

  std::string treated_name;
  std::vector<std::string> donor_names;
  std::vector<std::string> pre_times;
  std::vector<std::string> post_times;
  std::vector<std::string> covariate_names;
  std::vector<std::string> warnings;

  Index n() const { return Y.size(); }
  Index p() const { return X.cols(); }
  bool has_covariates() const { return D.rows() > 0; }
  bool has_post() const { return post_X.rows() > 0; }
};

/// Check the shape invariants; duplicate donor columns only add a warning.
inline void validate(PanelDataset& panel) {
  if (panel.n() < 2) throw ConfigError("panel needs at least two pre-treatment periods");
  if (panel.p() < 1) throw ConfigError("panel needs at least one donor");
  if (panel.X.rows() != panel.n()) throw ConfigError("donor matrix and outcome differ in length");
  if (panel.Z.size() != panel.D.rows())
    throw ConfigError("covariates Z and D must be present together with matching rows");
  if (panel.has_covariates() && panel.D.cols() != panel.p())
    throw ConfigError("covariate matrix D must have one column per donor");
  if (panel.post_Y.size() != panel.post_X.rows())
    throw ConfigError("post-period outcome and donors differ in length");
  if (panel.has_post() && panel.post_X.cols() != panel.p())
    throw ConfigError("post-period donor matrix has the wrong number of columns");
  for (Index i = 0; i < panel.p(); ++i)
    for (Index j = i + 1; j < panel.p(); ++j)
      if (panel.X.col(i) == panel.X.col(j)) {
        auto name = [&](Index k) {
          return static_cast<std::size_t>(k) < panel.donor_names.size()
                     ? panel.donor_names[static_cast<std::size_t>(k)]
                     : "#" + std::to_string(k);
        };
        panel.warnings.push_back("donors " + name(i) + " and " + name(j) + " have identical pre-treatment series");
      }
}

/// Panel view with the treated unit replaced by donor j and donor j removed.
inline PanelDataset leave_donor_out(const PanelDataset& panel, Index j) {
  PanelDataset out;
  IndexSet rest = set_difference(index_range(panel.p()), IndexSet{j});
  out.Y = panel.X.col(j);
  out.X = select_cols(panel.X, rest);
  if (panel.has_covariates()) {
    out.Z = panel.D.col(j);
    out.D = select_cols(panel.D, rest);
  }
  if (panel.has_post()) {
    out.post_Y = panel.post_X.col(j);
    out.post_X = select_cols(panel.post_X, rest);
  }
  return out;
}

}  // namespace synthsel
