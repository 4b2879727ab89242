#pragma once

#include "bpmot/numerics.hpp"

#include <vector>

namespace bpmot::association {

/// beta: I x (J+1), column 0 is "no measurement"; xi: J weights of a
/// measurement staying unassociated with any legacy PO.
struct AssociationProblem {
    Mat beta;
    Vec xi;

    [[nodiscard]] Eigen::Index num_objects() const { return beta.rows(); }
    [[nodiscard]] Eigen::Index num_measurements() const { return xi.size(); }
};

/// kappa: I x (J+1) posterior association probabilities of a_i;
/// iota: J x (I+1) of b_j (column 0 = unassociated).
/// kappa_msg / iota_msg are the normalized extrinsic messages that enter
/// the legacy update and new-PO initialization.
struct AssociationMarginals {
    Mat kappa;
    Mat iota;
    Mat kappa_msg;
    Mat iota_msg;
    int iterations = 0;
    bool converged = true;
};

/// a in {0..J}^I, b in {0..I}^J (1-based association, 0 = none).
[[nodiscard]] bool consistency(const std::vector<int>& a, const std::vector<int>& b);

/// Exhaustive oracle; I <= 8 and J <= 8.
[[nodiscard]] AssociationMarginals enumerate_marginals(const AssociationProblem& p);

[[nodiscard]] AssociationMarginals bp_marginals(const AssociationProblem& p, int max_iter = 200,
                                                double tol = 1e-6);

}  // namespace bpmot::association
