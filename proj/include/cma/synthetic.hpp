#pragma once

#include <cstdint>
#include <string>

#include "cma/record.hpp"

// Synthetic feature stores with a known class structure.
//
// Each modality has a fixed unit direction u_t (text) or u_m (image), drawn
// from `distribution_seed`. With s = +1 for label 1 and s = -1 for label 0,
// every token of a record is
//
//     x = offset * 1/sqrt(d) + s * (separation / 2) * u + noise * N(0, I)
//
// where the signal term is present only in modalities that carry the label:
//
//   blobs          both modalities carry the signal.
//   complementary  each record picks one carrier modality with probability
//                  1/2; the other modality is pure noise. A single modality
//                  therefore separates at most about 3/4 of the records,
//                  while both together separate nearly all of them.
//
// `flip_labels` negates s, giving a store whose label-feature correspondence
// is the reverse of an unflipped store with the same distribution_seed.
// Stores that share distribution_seed but differ in sample_seed are disjoint
// draws from one distribution.
namespace cma::synthetic {

enum class Kind { blobs, complementary };

struct Spec {
    Kind kind = Kind::blobs;
    std::size_t dim = 64;
    std::size_t per_class = 100;
    std::size_t text_tokens = 1;
    std::size_t image_tokens = 1;
    double separation = 16.0;
    double noise = 1.0;
    double offset = 0.0;
    bool flip_labels = false;
    std::uint64_t distribution_seed = 7;
    std::uint64_t sample_seed = 1;
    std::string name = "synthetic";
};

FeatureStore generate(const Spec& spec);

Kind parse_kind(const std::string& s);

}  // namespace cma::synthetic
