#include "fedlab/io.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace fedlab {

namespace {

std::ofstream open_out(const std::string& path, bool binary) {
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f) throw input_error("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path, bool binary) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) throw input_error("cannot open: " + path);
    return f;
}

} // namespace

void save_gvt1(const std::string& path, const Tensor& t, bool as_f32) {
    std::ofstream f = open_out(path, true);
    f << "GVT1 " << (as_f32 ? "f32" : "f64") << " " << t.rank();
    for (Index d : t.shape()) f << " " << d;
    f << "\n";
    if (as_f32) {
        std::vector<float> buf(std::size_t(t.size()));
        for (Index i = 0; i < t.size(); ++i) buf[std::size_t(i)] = float(t[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                std::streamsize(buf.size() * sizeof(float)));
    } else {
        f.write(reinterpret_cast<const char*>(t.values().data()),
                std::streamsize(std::size_t(t.size()) * sizeof(double)));
    }
    if (!f) throw input_error("write failed: " + path);
}

Tensor load_gvt1(const std::string& path) {
    std::ifstream f = open_in(path, true);
    std::string line;
    if (!std::getline(f, line)) throw input_error("empty GVT1 file: " + path);
    std::istringstream hdr(line);
    std::string magic, dtype;
    Index ndim = -1;
    hdr >> magic >> dtype >> ndim;
    if (magic != "GVT1" || (dtype != "f32" && dtype != "f64") || ndim < 0 || ndim > 8)
        throw input_error("malformed GVT1 header in " + path);
    Shape shape;
    for (Index i = 0; i < ndim; ++i) {
        Index d = 0;
        hdr >> d;
        if (!hdr || d <= 0) throw input_error("malformed GVT1 dims in " + path);
        shape.push_back(d);
    }
    const Index n = shape_size(shape);
    Vec out(n);
    if (dtype == "f32") {
        std::vector<float> buf(std::size_t(n), 0.0f);
        f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
        if (!f) throw input_error("truncated GVT1 payload in " + path);
        for (Index i = 0; i < n; ++i) out[i] = double(buf[std::size_t(i)]);
    } else {
        f.read(reinterpret_cast<char*>(out.data()),
               std::streamsize(std::size_t(n) * sizeof(double)));
        if (!f) throw input_error("truncated GVT1 payload in " + path);
    }
    return Tensor(std::move(out), std::move(shape));
}

void save_params(const std::string& prefix, const ParamVector& pv) {
    save_gvt1(prefix + ".trainable.gvt1", Tensor(pv.trainable, {pv.trainable.size()}));
    // Keep the bundle shape fixed even when the model has no buffers.
    Vec buf = pv.buffers.size() > 0 ? pv.buffers : Vec::Zero(1);
    save_gvt1(prefix + ".buffers.gvt1", Tensor(buf, {buf.size()}));

    std::ofstream f = open_out(prefix + ".layout.txt", false);
    f << "# kind name offset shape\n";
    if (pv.buffers.size() == 0) f << "# no-buffers\n";
    for (const auto& e : pv.layout) {
        f << (e.buffer ? "buffer" : "trainable") << " " << e.name << " " << e.offset << " ";
        for (std::size_t i = 0; i < e.shape.size(); ++i)
            f << (i ? "x" : "") << e.shape[i];
        if (e.shape.empty()) f << "1";
        f << "\n";
    }
    if (!f) throw input_error("write failed: " + prefix + ".layout.txt");
}

ParamVector load_params(const std::string& prefix) {
    ParamVector pv;
    pv.trainable = load_gvt1(prefix + ".trainable.gvt1").values();
    pv.buffers = load_gvt1(prefix + ".buffers.gvt1").values();

    std::ifstream f = open_in(prefix + ".layout.txt", false);
    bool no_buffers = false;
    std::string line;
    while (std::getline(f, line)) {
        if (line == "# no-buffers") no_buffers = true;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        std::string kind, name, shape_str;
        Index offset = -1;
        row >> kind >> name >> offset >> shape_str;
        if (!row || (kind != "trainable" && kind != "buffer") || offset < 0)
            throw input_error("malformed layout line in " + prefix + ".layout.txt: " + line);
        LayoutEntry e;
        e.name = name;
        e.buffer = kind == "buffer";
        e.offset = offset;
        for (std::size_t pos = 0; pos < shape_str.size();) {
            std::size_t next = shape_str.find('x', pos);
            if (next == std::string::npos) next = shape_str.size();
            e.shape.push_back(Index(std::stoll(shape_str.substr(pos, next - pos))));
            pos = next + 1;
        }
        pv.layout.push_back(std::move(e));
    }
    if (no_buffers) pv.buffers = Vec();
    return pv;
}

void save_labeled_set(const std::string& prefix, const LabeledSet& s) {
    save_gvt1(prefix + ".images.gvt1", s.images);
    std::ofstream f = open_out(prefix + ".labels.txt", false);
    for (int l : s.labels) f << l << "\n";
    if (!f) throw input_error("write failed: " + prefix + ".labels.txt");
}

LabeledSet load_labeled_set(const std::string& prefix) {
    LabeledSet s;
    s.images = load_gvt1(prefix + ".images.gvt1");
    std::ifstream f = open_in(prefix + ".labels.txt", false);
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        s.labels.push_back(std::stoi(line));
    }
    if (Index(s.labels.size()) != s.images.dim(0))
        throw input_error("label count does not match image count for " + prefix);
    return s;
}

void save_ppm(const std::string& path, const Tensor& image) {
    Shape s = image.shape();
    if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
    require(s.size() == 3 && (s[0] == 1 || s[0] == 3),
            "save_ppm: expected [C,H,W] with 1 or 3 channels, got " + shape_str(image.shape()));
    const Index c = s[0], h = s[1], w = s[2];
    const Scalar* px = image.values().data();

    std::ofstream f = open_out(path, true);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(std::size_t(w) * 3);
    for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
            for (Index ch = 0; ch < 3; ++ch) {
                const Index src_c = c == 1 ? 0 : ch;
                double v = px[(src_c * h + y) * w + x];
                v = std::min(std::max(v, 0.0), 1.0);
                row[std::size_t(x * 3 + ch)] = (unsigned char)std::lround(255.0 * v);
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!f) throw input_error("write failed: " + path);
}

Tensor load_ppm(const std::string& path) {
    std::ifstream f = open_in(path, true);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw input_error("not a P6 PPM: " + path);
    // Header tokens may be separated by whitespace or comment lines.
    auto next_int = [&]() -> Index {
        for (;;) {
            int ch = f.peek();
            if (ch == EOF) throw input_error("malformed PPM header: " + path);
            if (ch == '#') {
                std::string skip;
                std::getline(f, skip);
            } else if (std::isspace(ch)) {
                f.get();
            } else {
                break;
            }
            if (!f) throw input_error("malformed PPM header: " + path);
        }
        Index v = -1;
        f >> v;
        if (!f || v < 0) throw input_error("malformed PPM header: " + path);
        return v;
    };
    const Index w = next_int(), h = next_int(), maxv = next_int();
    if (maxv != 255) throw input_error("unsupported PPM max value in " + path);
    f.get(); // the single whitespace byte before the payload

    std::vector<unsigned char> buf(std::size_t(w * h * 3));
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!f) throw input_error("truncated PPM payload in " + path);

    Vec out(3 * h * w);
    for (Index ch = 0; ch < 3; ++ch)
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x)
                out[(ch * h + y) * w + x] = double(buf[std::size_t((y * w + x) * 3 + ch)]) / 255.0;
    return Tensor(std::move(out), {3, h, w});
}

std::string num_str(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    require(ec == std::errc(), "num_str: conversion failed");
    return std::string(buf, ptr);
}

struct CsvWriter::Impl {
    std::ofstream f;
    std::size_t cols = 0;
};

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : impl_(std::make_unique<Impl>()) {
    impl_->f = open_out(path, false);
    impl_->cols = header.size();
    row(header);
}

CsvWriter::~CsvWriter() = default;

void CsvWriter::row(const std::vector<std::string>& cells) {
    require(cells.size() == impl_->cols, "csv: wrong cell count for row");
    // validate everything up front so a rejected row leaves the file untouched
    for (const std::string& c : cells)
        require(c.find_first_of(",\n\"") == std::string::npos,
                "csv: cell needs quoting, which this writer does not do: " + c);
    for (std::size_t i = 0; i < cells.size(); ++i)
        impl_->f << (i ? "," : "") << cells[i];
    impl_->f << "\n";
    impl_->f.flush();
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream f = open_in(path, true);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        const std::streamsize n = f.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= (unsigned char)buf[i];
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
    return std::string(buf);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f = open_out(path, true);
    f.write(content.data(), std::streamsize(content.size()));
    if (!f) throw input_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f = open_in(path, true);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace fedlab
