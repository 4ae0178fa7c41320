#pragma once

#include <cstdint>

#include "pipelearn/matrix.hpp"

namespace pipelearn {

// Feature matrix plus one-hot labels, row-aligned.
struct Dataset {
    Matrix features;
    Matrix labels;
};

// Seeded Gaussian blobs, one per class, label-balanced and shuffled. Class c
// is centred at separation * e_{c mod features}; separation around 4 gives a
// linearly separable set.
Dataset make_blobs(std::size_t samples, std::size_t features, std::size_t classes,
                   double separation, std::uint64_t seed);

// Fraction of rows whose argmax prediction matches the one-hot label.
double accuracy(const Matrix& prediction, const Matrix& label);

}  // namespace pipelearn
