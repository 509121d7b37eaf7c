#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit::stainsep {

// Columns are unit-L2-norm nonnegative stain color bases in OD space,
// ordered hematoxylin-first (descending cosine to the reference
// hematoxylin direction, ties broken by larger first-channel value).
struct StainMatrix {
    Eigen::MatrixXd basis;  // 3 x r

    int stains() const { return static_cast<int>(basis.cols()); }
};

// Per-pixel stain concentrations, one row per stain.
struct StainDensity {
    Eigen::MatrixXd density;  // r x n

    int stains() const { return static_cast<int>(density.rows()); }
    int pixels() const { return static_cast<int>(density.cols()); }
};

struct SeparationConfig {
    int r = 2;
    double sparsity = 0.1;          // L1 weight on H
    int max_iters = 200;
    double tol = 1e-6;              // relative objective change
    double tissue_od_threshold = 0.15;
    std::uint64_t seed = 0;
};

struct SeparationResult {
    StainMatrix stains;
    StainDensity density;           // full image, background by projection
    std::vector<double> objective;  // penalized objective per iteration
    int iterations = 0;
    bool converged = false;
    bool degenerate = false;        // two columns with cosine > 0.999
};

// Normalization target: fitted stain basis plus robust density maxima.
struct StainProfile {
    StainMatrix stains;
    std::vector<double> density_scale;  // 99th-percentile density per stain
};

// Reference H&E directions used for initialization and canonical ordering.
Eigen::Vector3d reference_hematoxylin();
Eigen::Vector3d reference_eosin();

// Pixel p is tissue iff the L2 norm of its OD triple exceeds threshold.
std::vector<bool> tissue_mask(const OdImage& od, double threshold);

// Sparse NMF (alternating multiplicative updates) on the tissue pixels:
// minimizes ||I - WH||_F^2 + lambda * sum(H), W columns kept unit-norm.
// Throws InsufficientTissue when fewer than 10*r tissue pixels remain.
SeparationResult estimate_stains(const OdImage& od, const SeparationConfig& cfg);

// Matrix product WH as an OdImage.
OdImage reconstruct(const StainMatrix& w, const StainDensity& h, int width, int height);

// Nearest-rank percentile per stain row, p in (0, 100].
std::vector<double> density_percentile(const StainDensity& h, double p = 99.0);

StainProfile fit_profile(const RgbImage& img, const SeparationConfig& cfg);

// SPCN: keep the source's density structure, swap in the target basis and
// rescale each stain row to the target's robust maximum.
RgbImage normalize_spcn(const RgbImage& src, const StainProfile& target, const SeparationConfig& cfg);

// Nonnegative projection of OD pixels onto a fixed basis (clamped least
// squares); used for background densities and for H preservation checks.
StainDensity project_density(const OdImage& od, const StainMatrix& w);

// JSON (de)serialization of the on-disk target-profile format.
std::string profile_to_json(const StainProfile& profile);
StainProfile profile_from_json(const std::string& json_text);

}  // namespace stainkit::stainsep
