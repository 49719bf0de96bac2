#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckn/train.hpp"

namespace ckn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Model model;
    int iteration = 0;
    double step = 0.0;
    std::string rng_state;  // textual std::mt19937_64 state
    // Preprocessing of the training data, replayed on evaluation data.
    std::vector<ProvenanceStep> provenance;
};

Checkpoint make_checkpoint(const TrainState& s, std::vector<ProvenanceStep> provenance = {});
TrainState restore_state(const Checkpoint& c);

// Binary layout (little-endian): "CKN1", u32 version, u64 meta length, JSON meta
// (spec, lambda, iteration, step, data provenance), u32 record count, records of
// (u32 name length, name, u32 rank, u64 dims, row-major f64 payload), u64 FNV-1a
// checksum of all preceding bytes. Any defect raises CheckpointError.
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

std::string metrics_csv_header();
std::string format_metrics_row(const MetricsRow& r);

// Creates the file with the header row.
void write_metrics_header(const std::string& path);
void append_metrics_row(const std::string& path, const MetricsRow& r);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace ckn
