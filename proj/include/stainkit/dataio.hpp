#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stainkit/image.hpp"

namespace stainkit::dataio {

struct ManifestRow {
    std::string id;
    std::string image_path;
    std::string mask_path;  // may be empty
    std::string scanner;
    std::optional<int> fold;
};

struct Manifest {
    std::vector<ManifestRow> rows;
};

struct FoldAssignment {
    int k = 0;
    std::map<std::string, int> assignments;  // id -> fold in [0, k)
};

// PNG, 8-bit RGB; grayscale and palette inputs are expanded, alpha stripped.
RgbImage read_image(const std::string& path);
void write_image(const RgbImage& img, const std::string& path);

// PNG; pixel positive iff value > 127. Writes 8-bit gray {0, 255}.
SegMask read_mask(const std::string& path);
void write_mask(const SegMask& mask, const std::string& path);

// CSV with header id,image_path,mask_path,scanner[,fold].
Manifest read_manifest(const std::string& path);
void write_manifest(const Manifest& manifest, const std::string& path);

// Seeded shuffle per scanner stratum, then a round-robin deal into k
// folds; per-stratum fold sizes differ by at most 1.
FoldAssignment stratified_kfold(const Manifest& manifest, int k, std::uint64_t seed);

std::string folds_to_json(const FoldAssignment& folds);
FoldAssignment folds_from_json(const std::string& json_text);

}  // namespace stainkit::dataio
