#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fsrel/autodiff.hpp"
#include "fsrel/model.hpp"
#include "fsrel/model_config.hpp"
#include "fsrel/synthetic.hpp"
#include "fsrel/types.hpp"

namespace testing {

using fsrel::ad::Mat;

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f w.r.t. every entry of `x`, compared against `analytic`.
// Returns the worst relative error.
inline double fd_worst(Mat& x, const Mat& analytic, const std::function<double()>& f, double h = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double up = f();
        x.data()[i] = saved - h;
        const double down = f();
        x.data()[i] = saved;
        worst = std::max(worst, rel_err((up - down) / (2 * h), analytic.data()[i], 1e-7));
    }
    return worst;
}

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
    std::normal_distribution<double> n(0.0, s);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

inline fsrel::ModelConfig tiny_model_config(int num_categories, int num_predicates, int d_app = 6) {
    fsrel::ModelConfig c;
    c.d_app = d_app;
    c.d_vis = 6;
    c.d_ctx = 5;
    c.d_txt = 4;
    c.d_proto = 3;
    c.d_final = 5;
    c.hidden = 6;
    c.text_hidden = 5;
    c.prompt_length = 3;
    c.num_categories = num_categories;
    c.num_predicates = num_predicates;
    return c;
}

inline fsrel::WorldConfig small_world(int images = 80) {
    fsrel::WorldConfig w;
    w.num_categories = 8;
    w.num_groups = 4;
    w.num_predicates = 6;
    w.appearance_dim = 6;
    w.num_images = images;
    w.triplets_per_image = 2;
    w.distractors_per_image = 1;
    w.test_fraction = 0.4;
    w.frequency_decay = 0.1;
    return w;
}

inline fsrel::ObjectInstance make_object(int id, int category, fsrel::Box box, std::vector<double> app) {
    fsrel::ObjectInstance o;
    o.id = id;
    o.category = fsrel::CategoryId{category};
    o.bbox = box;
    o.appearance = std::move(app);
    return o;
}

}  // namespace testing
