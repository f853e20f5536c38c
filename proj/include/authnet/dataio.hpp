#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "authnet/dataset.hpp"
#include "authnet/model.hpp"
#include "authnet/pipeline.hpp"

namespace authnet {

// ---- IDX image/label files (big-endian, u8 payloads) ----

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes the dataset as an IDX pair; pixels are rounded to u8.
void save_idx(const IdxDataset& ds, const std::string& images_path,
              const std::string& labels_path);

// ---- generated datasets ----

// Gaussian class blobs in pixel space; separation scales the spread of the
// class means. Labels cycle 0..classes-1.
IdxDataset gen_synthetic(std::size_t classes, std::size_t per_class,
                         std::array<std::size_t, 3> shape, double separation,
                         std::uint64_t seed);

// Procedural 28x28 handwritten-digit stand-in: stroke-rendered glyphs with
// seeded affine jitter, elastic wobble, stroke-width and intensity variation
// plus pixel noise. Pixels are quantised to u8 levels so that a save_idx /
// load_idx round trip is lossless. Class-balanced, shuffled.
IdxDataset gen_digits(std::size_t count, std::uint64_t seed);

// ---- model checkpoints ----

struct CheckpointMeta {
    long seg_index = -1;   // -1 = not a split-annotated model
    std::string note;      // free-form single-line lineage
};

void save_checkpoint(const SequentialModel& model, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
    SequentialModel model;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// ---- key files ----

void save_key(const AuthKey& key, const std::string& path);
AuthKey load_key(const std::string& path);

// ---- CSV ----

// Shortest decimal form that round-trips the exact double.
std::string csv_num(double v);
std::string csv_num(std::size_t v);

// RFC-4180 output: CRLF rows, mandatory header, minimal quoting.
void export_csv(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

// ---- small file helpers ----

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
std::uint64_t file_hash(const std::string& path); // FNV-1a of raw bytes

} // namespace authnet
