#include "stainkit/stainsep.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "stainkit/color.hpp"
#include "stainkit/errors.hpp"
#include "stainkit/rng.hpp"

namespace stainkit::stainsep {

namespace {

constexpr double kDenomEps = 1e-12;
constexpr double kDegenerateCosine = 0.999;

Eigen::Vector3d third_reference() {
    // residual direction complementing H&E, normalized below
    return Eigen::Vector3d(0.27, 0.57, 0.78);
}

void normalize_columns(Eigen::MatrixXd& w, Eigen::MatrixXd* h) {
    for (int j = 0; j < w.cols(); ++j) {
        double norm = w.col(j).norm();
        if (norm <= 0.0) continue;
        w.col(j) /= norm;
        if (h) h->row(j) *= norm;
    }
}

double objective_value(const Eigen::MatrixXd& v, const Eigen::MatrixXd& w,
                       const Eigen::MatrixXd& h, double lambda) {
    return (v - w * h).squaredNorm() + lambda * h.sum();
}

// Hematoxylin first: descending cosine to the reference hematoxylin
// direction, ties broken by larger first channel.
void canonical_order(Eigen::MatrixXd& w, Eigen::MatrixXd& h) {
    const Eigen::Vector3d ref = reference_hematoxylin();
    const int r = static_cast<int>(w.cols());
    std::vector<int> order(r);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double ca = w.col(a).dot(ref);
        double cb = w.col(b).dot(ref);
        if (ca != cb) return ca > cb;
        return w(0, a) > w(0, b);
    });
    Eigen::MatrixXd w2(w.rows(), r);
    Eigen::MatrixXd h2(r, h.cols());
    for (int j = 0; j < r; ++j) {
        w2.col(j) = w.col(order[j]);
        h2.row(j) = h.row(order[j]);
    }
    w = std::move(w2);
    h = std::move(h2);
}

bool has_degenerate_pair(const Eigen::MatrixXd& w) {
    for (int a = 0; a < w.cols(); ++a)
        for (int b = a + 1; b < w.cols(); ++b)
            if (w.col(a).dot(w.col(b)) > kDegenerateCosine) return true;
    return false;
}

Eigen::MatrixXd initial_basis(int r, std::uint64_t seed) {
    Eigen::MatrixXd w(3, r);
    std::vector<Eigen::Vector3d> refs = {reference_hematoxylin(), reference_eosin(), third_reference()};
    Rng rng = Rng(seed).split(0x57494E49ULL);
    for (int j = 0; j < r; ++j) {
        Eigen::Vector3d col = refs[static_cast<std::size_t>(j)].normalized();
        for (int c = 0; c < 3; ++c) col[c] += rng.uniform(0.0, 0.05);
        w.col(j) = col;
    }
    normalize_columns(w, nullptr);
    return w;
}

Eigen::MatrixXd nonneg_project(const Eigen::MatrixXd& v, const Eigen::MatrixXd& w) {
    Eigen::MatrixXd gram = w.transpose() * w;
    Eigen::MatrixXd h = gram.ldlt().solve(w.transpose() * v);
    return h.cwiseMax(0.0);
}

Eigen::MatrixXd od_as_matrix(const OdImage& od) {
    const int n = od.pixels();
    Eigen::MatrixXd v(3, n);
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < n; ++p) v(c, p) = od.at(c, p);
    return v;
}

}  // namespace

Eigen::Vector3d reference_hematoxylin() {
    return Eigen::Vector3d(0.65, 0.70, 0.29).normalized();
}

Eigen::Vector3d reference_eosin() {
    return Eigen::Vector3d(0.07, 0.99, 0.11).normalized();
}

std::vector<bool> tissue_mask(const OdImage& od, double threshold) {
    const int n = od.pixels();
    std::vector<bool> mask(n, false);
    for (int p = 0; p < n; ++p) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += od.at(c, p) * od.at(c, p);
        mask[p] = std::sqrt(s) > threshold;
    }
    return mask;
}

SeparationResult estimate_stains(const OdImage& od, const SeparationConfig& cfg) {
    if (cfg.r < 1 || cfg.r > 3) throw InvalidInput("estimate_stains: r must be in [1, 3]");
    if (cfg.sparsity < 0.0) throw InvalidInput("estimate_stains: sparsity must be >= 0");
    if (cfg.max_iters < 1) throw InvalidInput("estimate_stains: max_iters must be >= 1");

    const std::vector<bool> mask = tissue_mask(od, cfg.tissue_od_threshold);
    const int n_tissue = static_cast<int>(std::count(mask.begin(), mask.end(), true));
    if (n_tissue < 10 * cfg.r)
        throw InsufficientTissue("estimate_stains: " + std::to_string(n_tissue) +
                                 " tissue pixels, need " + std::to_string(10 * cfg.r));

    Eigen::MatrixXd v(3, n_tissue);
    {
        int q = 0;
        for (int p = 0; p < od.pixels(); ++p) {
            if (!mask[p]) continue;
            for (int c = 0; c < 3; ++c) v(c, q) = od.at(c, p);
            ++q;
        }
    }

    Eigen::MatrixXd w = initial_basis(cfg.r, cfg.seed);
    Eigen::MatrixXd h = nonneg_project(v, w).cwiseMax(kDenomEps);

    SeparationResult result;
    result.objective.reserve(cfg.max_iters);
    double prev_obj = objective_value(v, w, h, cfg.sparsity);

    for (int it = 0; it < cfg.max_iters; ++it) {
        // H step: H <- H .* (2 W'V) ./ (2 W'WH + lambda)
        Eigen::MatrixXd numer_h = 2.0 * (w.transpose() * v);
        Eigen::MatrixXd denom_h = 2.0 * (w.transpose() * w * h);
        denom_h.array() += cfg.sparsity + kDenomEps;
        h = h.cwiseProduct(numer_h.cwiseQuotient(denom_h));

        // W step: normalization-aware multiplicative rule. The plain rule
        // followed by a renorm rescales the L1 term and can raise the
        // penalized objective; this form keeps it non-increasing with the
        // columns constrained to unit norm.
        Eigen::MatrixXd a = v * h.transpose();        // m x r
        Eigen::MatrixXd b = w * (h * h.transpose());  // m x r
        for (int j = 0; j < w.cols(); ++j) {
            double alpha = w.col(j).dot(b.col(j));
            double beta = w.col(j).dot(a.col(j));
            Eigen::VectorXd numer = a.col(j) + alpha * w.col(j);
            Eigen::VectorXd denom = (b.col(j) + beta * w.col(j)).array() + kDenomEps;
            w.col(j) = w.col(j).cwiseProduct(numer.cwiseQuotient(denom));
        }
        normalize_columns(w, nullptr);

        double obj = objective_value(v, w, h, cfg.sparsity);
        result.objective.push_back(obj);
        result.iterations = it + 1;
        if (prev_obj > 0.0 && std::abs(prev_obj - obj) / prev_obj < cfg.tol) {
            result.converged = true;
            prev_obj = obj;
            break;
        }
        prev_obj = obj;
    }

    canonical_order(w, h);
    result.degenerate = has_degenerate_pair(w);
    result.stains.basis = w;

    // Densities for the whole image (background included) by projection.
    result.density = project_density(od, result.stains);
    return result;
}

OdImage reconstruct(const StainMatrix& w, const StainDensity& h, int width, int height) {
    if (w.basis.rows() != 3 || w.basis.cols() != h.density.rows())
        throw InvalidInput("reconstruct: shape mismatch between W and H");
    if (width * height != h.pixels())
        throw InvalidInput("reconstruct: H pixel count does not match dimensions");
    Eigen::MatrixXd prod = w.basis * h.density;
    OdImage od(width, height);
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < od.pixels(); ++p) od.at(c, p) = prod(c, p);
    return od;
}

std::vector<double> density_percentile(const StainDensity& h, double p) {
    if (h.pixels() < 1) throw InvalidInput("density_percentile: empty density");
    if (p <= 0.0 || p > 100.0) throw InvalidInput("density_percentile: p must be in (0, 100]");
    std::vector<double> scales(h.stains());
    const int n = h.pixels();
    for (int j = 0; j < h.stains(); ++j) {
        std::vector<double> row(n);
        for (int q = 0; q < n; ++q) row[q] = h.density(j, q);
        std::sort(row.begin(), row.end());
        int rank = static_cast<int>(std::ceil(p / 100.0 * n));  // nearest-rank
        scales[j] = row[static_cast<std::size_t>(std::clamp(rank, 1, n)) - 1];
    }
    return scales;
}

StainDensity project_density(const OdImage& od, const StainMatrix& w) {
    StainDensity h;
    h.density = nonneg_project(od_as_matrix(od), w.basis);
    return h;
}

StainProfile fit_profile(const RgbImage& img, const SeparationConfig& cfg) {
    SeparationResult sep = estimate_stains(color::rgb_to_od(img), cfg);
    StainProfile profile;
    profile.stains = sep.stains;
    profile.density_scale = density_percentile(sep.density, 99.0);
    for (double& s : profile.density_scale)
        if (s <= 0.0) s = kDenomEps;
    return profile;
}

RgbImage normalize_spcn(const RgbImage& src, const StainProfile& target, const SeparationConfig& cfg) {
    if (target.stains.stains() != cfg.r)
        throw InvalidInput("normalize_spcn: target stain count does not match config");

    // Canonicalize the target so column permutations cannot mispair the
    // source density rows with the target basis.
    StainProfile tgt = target;
    {
        Eigen::MatrixXd scales(cfg.r, 1);
        for (int j = 0; j < cfg.r; ++j) scales(j, 0) = tgt.density_scale[static_cast<std::size_t>(j)];
        Eigen::MatrixXd basis = tgt.stains.basis;
        canonical_order(basis, scales);
        tgt.stains.basis = basis;
        for (int j = 0; j < cfg.r; ++j) tgt.density_scale[static_cast<std::size_t>(j)] = scales(j, 0);
    }

    SeparationResult sep = estimate_stains(color::rgb_to_od(src), cfg);
    std::vector<double> src_scale = density_percentile(sep.density, 99.0);

    StainDensity h = sep.density;
    for (int j = 0; j < h.stains(); ++j) {
        double denom = std::max(src_scale[static_cast<std::size_t>(j)], kDenomEps);
        h.density.row(j) *= tgt.density_scale[static_cast<std::size_t>(j)] / denom;
    }
    return color::od_to_rgb(reconstruct(tgt.stains, h, src.width, src.height));
}

std::string profile_to_json(const StainProfile& profile) {
    nlohmann::json j;
    j["m"] = 3;
    j["r"] = profile.stains.stains();
    std::vector<double> columns;
    for (int col = 0; col < profile.stains.stains(); ++col)
        for (int row = 0; row < 3; ++row) columns.push_back(profile.stains.basis(row, col));
    j["columns"] = columns;
    j["density_scale"] = profile.density_scale;
    return j.dump(2);
}

StainProfile profile_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    int m = j.at("m").get<int>();
    int r = j.at("r").get<int>();
    if (m != 3 || r < 1) throw FormatError("profile: expected m=3 and r >= 1");
    auto columns = j.at("columns").get<std::vector<double>>();
    if (static_cast<int>(columns.size()) != m * r) throw FormatError("profile: bad columns length");
    StainProfile profile;
    profile.stains.basis.resize(3, r);
    for (int col = 0; col < r; ++col)
        for (int row = 0; row < 3; ++row)
            profile.stains.basis(row, col) = columns[static_cast<std::size_t>(col) * 3 + row];
    profile.density_scale = j.at("density_scale").get<std::vector<double>>();
    if (static_cast<int>(profile.density_scale.size()) != r)
        throw FormatError("profile: bad density_scale length");
    return profile;
}

}  // namespace stainkit::stainsep
