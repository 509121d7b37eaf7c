#include "stainkit/dataio.hpp"

#include <png.h>

#include <memory>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "stainkit/errors.hpp"
#include "stainkit/rng.hpp"

namespace stainkit::dataio {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes any PNG to 8-bit, 3-channel rows.
struct DecodedPng {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // interleaved
};

DecodedPng decode_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw NotFound("cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw FormatError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng init failed");
    }

    DecodedPng out;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt or truncated PNG: " + path);
    }

    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    if (out.width < 1 || out.height < 1 || png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unsupported PNG layout: " + path);
    }

    out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    row_ptrs.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y)
        row_ptrs[static_cast<std::size_t>(y)] = out.rgb.data() + static_cast<std::size_t>(y) * out.width * 3;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void encode_png(const std::string& path, int width, int height, int channels,
                const std::uint8_t* data) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw NotFound("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("PNG write failed: " + path);
    }

    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

RgbImage read_image(const std::string& path) {
    DecodedPng png = decode_png(path);
    RgbImage img(png.width, png.height);
    img.data = std::move(png.rgb);
    return img;
}

void write_image(const RgbImage& img, const std::string& path) {
    if (img.pixels() < 1) throw InvalidInput("write_image: empty image");
    encode_png(path, img.width, img.height, 3, img.data.data());
}

SegMask read_mask(const std::string& path) {
    DecodedPng png = decode_png(path);
    SegMask mask(png.width, png.height);
    for (int p = 0; p < mask.pixels(); ++p) {
        std::uint8_t r = png.rgb[static_cast<std::size_t>(p) * 3 + 0];
        std::uint8_t g = png.rgb[static_cast<std::size_t>(p) * 3 + 1];
        std::uint8_t b = png.rgb[static_cast<std::size_t>(p) * 3 + 2];
        if (r != g || g != b)
            throw FormatError("mask has disagreeing RGB channels: " + path);
        mask.values[static_cast<std::size_t>(p)] = r > 127 ? 1 : 0;
    }
    return mask;
}

void write_mask(const SegMask& mask, const std::string& path) {
    if (mask.pixels() < 1) throw InvalidInput("write_mask: empty mask");
    std::vector<std::uint8_t> gray(mask.values.size());
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.values[i] ? 255 : 0;
    encode_png(path, mask.width, mask.height, 1, gray.data());
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open manifest: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty manifest: " + path, 1);
    std::vector<std::string> header = split_csv_line(strip_cr(line));

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* required : {"id", "image_path", "mask_path", "scanner"})
        if (!col.count(required))
            throw ParseError(std::string("MissingColumn: ") + required, 1);
    bool has_fold = col.count("fold") > 0;

    Manifest manifest;
    std::set<std::string> seen;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        std::string stripped = strip_cr(line);
        if (stripped.empty()) continue;
        std::vector<std::string> fields = split_csv_line(stripped);
        if (fields.size() < header.size())
            throw ParseError("malformed row: expected " + std::to_string(header.size()) +
                                 " fields, got " + std::to_string(fields.size()),
                             line_no);
        ManifestRow row;
        row.id = fields[col["id"]];
        row.image_path = fields[col["image_path"]];
        row.mask_path = fields[col["mask_path"]];
        row.scanner = fields[col["scanner"]];
        if (row.id.empty()) throw ParseError("empty id", line_no);
        if (!seen.insert(row.id).second)
            throw ParseError("DuplicateId: " + row.id, line_no);
        if (has_fold && !fields[col["fold"]].empty()) {
            try {
                row.fold = std::stoi(fields[col["fold"]]);
            } catch (const std::exception&) {
                throw ParseError("bad fold value: " + fields[col["fold"]], line_no);
            }
        }
        manifest.rows.push_back(std::move(row));
    }
    return manifest;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw NotFound("cannot open for writing: " + path);
    out << "id,image_path,mask_path,scanner,fold\n";
    for (const ManifestRow& row : manifest.rows) {
        out << row.id << "," << row.image_path << "," << row.mask_path << "," << row.scanner << ",";
        if (row.fold) out << *row.fold;
        out << "\n";
    }
}

FoldAssignment stratified_kfold(const Manifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidInput("stratified_kfold: k must be >= 2");
    if (k > static_cast<int>(manifest.rows.size()))
        throw InvalidInput("stratified_kfold: k exceeds row count");

    std::map<std::string, std::vector<std::string>> strata;  // ordered for determinism
    for (const ManifestRow& row : manifest.rows) strata[row.scanner].push_back(row.id);

    FoldAssignment folds;
    folds.k = k;
    Rng root(seed);
    std::uint64_t stratum_index = 0;
    for (auto& [scanner, ids] : strata) {
        Rng rng = root.split(stratum_index++);
        // Fisher-Yates
        for (std::size_t i = ids.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(rng.below(i));
            std::swap(ids[i - 1], ids[j]);
        }
        for (std::size_t i = 0; i < ids.size(); ++i)
            folds.assignments[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
    return folds;
}

std::string folds_to_json(const FoldAssignment& folds) {
    nlohmann::json j;
    j["k"] = folds.k;
    j["assignments"] = folds.assignments;
    return j.dump(2);
}

FoldAssignment folds_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    FoldAssignment folds;
    folds.k = j.at("k").get<int>();
    folds.assignments = j.at("assignments").get<std::map<std::string, int>>();
    return folds;
}

}  // namespace stainkit::dataio
