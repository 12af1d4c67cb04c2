#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "stgcl/tensor.hpp"

namespace stgcl::gradcheck {

// Central finite differences against reverse-mode gradients. The builder
// maps leaf variables to a scalar loss and must be a pure function of the
// leaf values (internal randomness has to come from fixed keys).
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdOptions {
    double step = 1e-5;
};

// Largest relative error over every element of every input, where
// rel = |ad - fd| / max(1, |ad|, |fd|).
double fd_max_rel_error(const Builder& builder, const std::vector<Tensor>& inputs,
                        FdOptions options = {});

struct OpCheck {
    std::string op;
    int instances = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Checks every autodiff op plus both contrastive losses on random inputs
// in [-1,1] (shifted where the domain demands it).
std::vector<OpCheck> run_all(u64 seed, int instances_per_op, double tolerance = 1e-4);

bool all_pass(const std::vector<OpCheck>& checks);

void print_checks(std::ostream& out, const std::vector<OpCheck>& checks);

}  // namespace stgcl::gradcheck
