#pragma once

// Persistence: the GVT1 tensor container, parameter-vector and dataset
// bundles, P6 PPM image export/import, CSV with stable number formatting, and
// FNV-1a content digests for the run manifest.

#include "fedlab/data.hpp"
#include "fedlab/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedlab {

// GVT1: ASCII header `GVT1 f32|f64 <ndim> <d0> <d1> ...\n` then raw
// little-endian row-major values. f32 is export-only; the reader widens it.
void save_gvt1(const std::string& path, const Tensor& t, bool as_f32 = false);
Tensor load_gvt1(const std::string& path);

// prefix + {".trainable.gvt1", ".buffers.gvt1", ".layout.txt"}. The layout
// file carries one `trainable|buffer <name> <offset> <d0>x<d1>...` per line.
void save_params(const std::string& prefix, const ParamVector& pv);
ParamVector load_params(const std::string& prefix);

// prefix + {".images.gvt1", ".labels.txt"} (one integer per line).
void save_labeled_set(const std::string& prefix, const LabeledSet& s);
LabeledSet load_labeled_set(const std::string& prefix);

// Binary P6, 8-bit, round(255 * clip(x, 0, 1)). Accepts [C,H,W] or [1,C,H,W]
// with C = 1 (replicated to gray RGB) or C = 3.
void save_ppm(const std::string& path, const Tensor& image);
Tensor load_ppm(const std::string& path); // [3,H,W] in [0,1]

// Rows of preformatted cells; numbers go through num_str for stable output.
std::string num_str(double v); // shortest round-trip-stable decimal form
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    ~CsvWriter();
    void row(const std::vector<std::string>& cells);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hex64(std::uint64_t v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

} // namespace fedlab
