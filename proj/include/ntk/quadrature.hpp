#pragma once

#include <vector>

namespace ntk {

struct GaussRule {
    std::vector<double> nodes;    // on [-1, 1]
    std::vector<double> weights;  // sum to 2
};

// Gauss-Legendre rule of order n (n >= 1). Rules are cached per order and
// the returned reference stays valid for the lifetime of the program.
const GaussRule& gauss_legendre(int n);

// Maps the rule onto [lo, hi]: fills x and w with n nodes and weights.
void gauss_on(int n, double lo, double hi, std::vector<double>& x, std::vector<double>& w);

}  // namespace ntk
