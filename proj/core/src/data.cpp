#include "pipelearn/data.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pipelearn {

Dataset make_blobs(std::size_t samples, std::size_t features, std::size_t classes,
                   double separation, std::uint64_t seed) {
    if (samples == 0 || features == 0 || classes == 0) {
        throw std::invalid_argument("make_blobs: samples, features and classes must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    Dataset set;
    set.features = Matrix(samples, features);
    set.labels = Matrix(samples, classes);

    // Round-robin class assignment keeps labels balanced; a seeded shuffle
    // makes the row order IID.
    std::vector<std::size_t> order(samples);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t i = 0; i < samples; ++i) {
        const std::size_t c = order[i] % classes;
        set.labels.at(i, c) = 1.0;
        for (std::size_t f = 0; f < features; ++f) {
            double v = noise(rng);
            if (f == c % features) v += separation;
            set.features.at(i, f) = v;
        }
    }
    return set;
}

double accuracy(const Matrix& prediction, const Matrix& label) {
    if (!prediction.same_shape(label) || prediction.rows() == 0) {
        throw std::invalid_argument("accuracy: prediction and label shapes differ or are empty");
    }
    std::size_t hits = 0;
    for (std::size_t r = 0; r < prediction.rows(); ++r) {
        std::size_t best_p = 0, best_l = 0;
        for (std::size_t c = 1; c < prediction.cols(); ++c) {
            if (prediction.at(r, c) > prediction.at(r, best_p)) best_p = c;
            if (label.at(r, c) > label.at(r, best_l)) best_l = c;
        }
        if (best_p == best_l) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(prediction.rows());
}

}  // namespace pipelearn
