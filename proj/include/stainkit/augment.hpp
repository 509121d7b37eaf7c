#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stainkit/image.hpp"
#include "stainkit/rng.hpp"
#include "stainkit/stainsep.hpp"

namespace stainkit::augment {

struct PerturbConfig {
    double scale_sigma = 0.05;  // log-normal sigma for per-entry W scaling
    int max_attempts = 10;
    std::uint64_t seed = 0;
};

// Gaussian priors over per-image LAB channel statistics, fitted on a
// template corpus.
struct StatPrior {
    struct Channel {
        double mu_mean = 0.0;
        double sigma_mean = 0.0;
        double mu_std = 0.0;
        double sigma_std = 0.0;
    };
    std::array<Channel, 3> channels{};
    int n_images = 0;
};

struct MixturePolicy {
    double p_randstainna = 0.25;
    double p_stain_sep = 0.25;
};

enum class AppliedAugment { identity, randstainna, stain_sep };

const char* applied_name(AppliedAugment a);

struct AugmentedSample {
    RgbImage image;
    SegMask mask;  // never modified by color paths
    AppliedAugment applied = AppliedAugment::identity;
};

struct StainAugmentResult {
    RgbImage image;
    bool fell_back = false;  // separation failed or stayed degenerate
};

// Multiply each entry by exp(N(0, sigma^2)) and renormalize columns.
stainsep::StainMatrix perturb_stain_matrix(const stainsep::StainMatrix& w,
                                           const PerturbConfig& cfg, Rng& rng);

// Separate, perturb W, recombine with the unchanged H.
StainAugmentResult stain_augment(const RgbImage& img, const stainsep::SeparationConfig& cfg,
                                 const PerturbConfig& pcfg, Rng& rng);

StatPrior fit_stat_prior(const std::vector<RgbImage>& corpus);

// Sample a target style from the prior and apply a Reinhard-style LAB
// mean/std transfer.
RgbImage randstainna_augment(const RgbImage& img, const StatPrior& prior, Rng& rng);

AugmentedSample mixture_augment(const RgbImage& img, const SegMask& mask,
                                const MixturePolicy& policy, const StatPrior& prior,
                                const stainsep::SeparationConfig& scfg,
                                const PerturbConfig& pcfg, Rng& rng);

// Independent 0.5-probability horizontal and vertical flips of both
// image and mask.
void geometric_augment(RgbImage& img, SegMask& mask, Rng& rng);

RgbImage flip_horizontal(const RgbImage& img);
RgbImage flip_vertical(const RgbImage& img);
SegMask flip_horizontal(const SegMask& mask);
SegMask flip_vertical(const SegMask& mask);

std::string prior_to_json(const StatPrior& prior);
StatPrior prior_from_json(const std::string& json_text);

}  // namespace stainkit::augment
