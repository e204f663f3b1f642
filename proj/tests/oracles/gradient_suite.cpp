// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "oracles/gradient_suite.hpp"

#include <algorithm>
#include <random>

#include "avloc/numkern/gradcheck.hpp"
#include "test_util.hpp"

namespace avloc::test::oracle {

using namespace avloc::nk;

std::vector<PrimitiveCase> primitive_cases() {
    auto mask = std::make_shared<Matrix>(Matrix{{1, 0, 1, 1}, {0, 1, 0, 0}, {1, 1, 1, 0}});
    return {
        {"matmul", {{3, 4}, {4, 2}}, [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); }},
        {"matmul_nt", {{3, 4}, {5, 4}}, [](Tape&, std::vector<Var>& v) { return matmul_nt(v[0], v[1]); }},
        {"transpose", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return transpose(v[0]); }},
        {"add", {{3, 4}, {3, 4}}, [](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, [](Tape&, std::vector<Var>& v) { return sub(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); }},
        {"scale", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return scale(v[0], -1.7); }},
        {"scale_by", {{3, 4}, {1, 1}}, [](Tape&, std::vector<Var>& v) { return scale_by(v[0], v[1]); }},
        {"add_scalar", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return add_scalar(v[0], 0.3); }},
        {"add_row", {{3, 4}, {1, 4}}, [](Tape&, std::vector<Var>& v) { return add_row(v[0], v[1]); }},
        {"mul_row", {{3, 4}, {1, 4}}, [](Tape&, std::vector<Var>& v) { return mul_row(v[0], v[1]); }},
        {"mul_col", {{3, 4}, {3, 1}}, [](Tape&, std::vector<Var>& v) { return mul_col(v[0], v[1]); }},
        {"sigmoid", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return sigmoid(v[0]); }},
        {"exp", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return exp(v[0]); }},
        {"log", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return log(v[0]); }, 0.2, 3.0},
        {"relu", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return relu(v[0]); }},
        {"softplus", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return softplus(v[0]); }, -4, 4},
        {"smooth_l1", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return smooth_l1(v[0], 1.0); }, -3, 3},
        {"masked_softmax", {{3, 4}},
         [mask](Tape&, std::vector<Var>& v) { return masked_softmax(v[0], mask); }, -3, 3},
        {"softmax_rows", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return softmax_rows(v[0]); }, -3, 3},
        {"log_softmax_rows", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return log_softmax_rows(v[0]); }, -3, 3},
        {"concat_cols", {{3, 2}, {3, 3}}, [](Tape&, std::vector<Var>& v) { return concat_cols({v[0], v[1], v[0]}); }},
        {"concat_rows", {{2, 3}, {1, 3}}, [](Tape&, std::vector<Var>& v) { return concat_rows({v[1], v[0], v[1]}); }},
        {"slice_rows", {{5, 3}}, [](Tape&, std::vector<Var>& v) { return slice_rows(v[0], 1, 3); }},
        {"slice_cols", {{3, 5}}, [](Tape&, std::vector<Var>& v) { return slice_cols(v[0], 2, 2); }},
        {"gather_rows", {{4, 3}}, [](Tape&, std::vector<Var>& v) { return gather_rows(v[0], {3, -1, 0, 0, 2}); }},
        {"sum_all", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return sum_all(v[0]); }},
        {"mean_all", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return mean_all(v[0]); }},
        {"mean_rows", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return mean_rows(v[0]); }},
        {"max_pool_rows2", {{5, 3}}, [](Tape&, std::vector<Var>& v) { return max_pool_rows2(v[0]); }},
        {"max_cols", {{4, 5}}, [](Tape&, std::vector<Var>& v) { return max_cols(v[0]); }},
        {"normalize_rows", {{3, 5}}, [](Tape&, std::vector<Var>& v) { return normalize_rows(v[0]); }},
        {"l2_normalize_rows", {{3, 5}}, [](Tape&, std::vector<Var>& v) { return l2_normalize_rows(v[0]); }},
    };
}


double check_primitive(const PrimitiveCase& c, int trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        ParameterSet ps;
        for (std::size_t i = 0; i < c.shapes.size(); ++i)
            ps.add("in" + std::to_string(i), random_matrix(c.shapes[i].first, c.shapes[i].second, rng, c.lo, c.hi));
        Matrix weights;
        {
            Tape probe;
            std::vector<Var> ins;
            for (Parameter* p : ps.all()) ins.push_back(probe.param(*p));
            Var y = c.op(probe, ins);
            weights = random_matrix(y.rows(), y.cols(), rng);
        }
        auto params = ps.all();
        auto rep = check_gradients(
            [&](Tape& t) {
                std::vector<Var> ins;
                for (Parameter* p : params) ins.push_back(t.param(*p));
                return sum_all(mul(c.op(t, ins), t.constant(weights)));
            },
            params);
        for (const auto& e : rep.entries)
            if (e.unverifiable) return 1.0;
        worst = std::max(worst, rep.max_relative_error);
    }
    return worst;
}

}  // namespace avloc::test::oracle
