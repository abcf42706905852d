#include "rifcn/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <zlib.h>

namespace rifcn {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file: " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_atomic(const fs::path& path, const std::uint8_t* data, std::size_t size) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot open file for writing: " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) {
            throw DataError("short write: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

const char* dtype_name(NtrDtype d) {
    switch (d) {
    case NtrDtype::U8:
        return "u8";
    case NtrDtype::F32:
        return "f32";
    case NtrDtype::F64:
        return "f64";
    }
    return "?";
}

std::size_t dtype_size(NtrDtype d) {
    return d == NtrDtype::U8 ? 1 : d == NtrDtype::F32 ? 4 : 8;
}

NtrDtype dtype_from_name(const std::string& s) {
    if (s == "u8") {
        return NtrDtype::U8;
    }
    if (s == "f32") {
        return NtrDtype::F32;
    }
    if (s == "f64") {
        return NtrDtype::F64;
    }
    throw DataError("ntr: unknown dtype " + s);
}

std::string ntr_header(const NtrTensor& t) {
    std::string h = dtype_name(t.dtype);
    h += " " + std::to_string(t.dims.size());
    for (std::uint64_t d : t.dims) {
        h += " " + std::to_string(d);
    }
    h += "\n";
    return h;
}

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
}

std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }

    const std::uint8_t* take(std::size_t count, const char* what) {
        if (remaining() < count) {
            throw DataError(std::string("ntr: truncated file while reading ") + what);
        }
        const std::uint8_t* p = data_ + pos_;
        pos_ += count;
        return p;
    }

    std::string take_line(const char* what) {
        const std::size_t start = pos_;
        while (pos_ < size_ && data_[pos_] != '\n') {
            if (pos_ - start > 4096) {
                throw DataError(std::string("ntr: unterminated header while reading ") + what);
            }
            ++pos_;
        }
        if (pos_ >= size_) {
            throw DataError(std::string("ntr: truncated file while reading ") + what);
        }
        std::string line(reinterpret_cast<const char*>(data_ + start), pos_ - start);
        ++pos_; // consume '\n'
        return line;
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

NtrTensor parse_ntr_body(ByteReader& r) {
    NtrTensor t;
    std::istringstream hs(r.take_line("tensor header"));
    std::string dtype;
    std::size_t ndim = 0;
    if (!(hs >> dtype >> ndim) || ndim == 0 || ndim > 8) {
        throw DataError("ntr: malformed tensor header");
    }
    t.dtype = dtype_from_name(dtype);
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        std::uint64_t d = 0;
        if (!(hs >> d) || d == 0) {
            throw DataError("ntr: malformed tensor dims");
        }
        if (count > (1ull << 33) / d) {
            throw DataError("ntr: dimension overflow");
        }
        count *= d;
        t.dims.push_back(d);
    }
    const std::size_t bytes = count * dtype_size(t.dtype);
    const std::uint8_t* p = r.take(bytes, "tensor payload");
    t.payload.assign(p, p + bytes);
    return t;
}

} // namespace

void write_text_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

std::size_t NtrTensor::element_count() const {
    std::size_t c = 1;
    for (std::uint64_t d : dims) {
        c *= d;
    }
    return c;
}

void write_ntr(const fs::path& path, const NtrTensor& t) {
    if (t.payload.size() != t.element_count() * dtype_size(t.dtype)) {
        throw DataError("ntr: payload size does not match dims");
    }
    std::vector<std::uint8_t> bytes;
    const std::string header = ntr_header(t);
    bytes.reserve(4 + header.size() + t.payload.size());
    bytes.insert(bytes.end(), {'N', 'T', 'R', '1'});
    bytes.insert(bytes.end(), header.begin(), header.end());
    bytes.insert(bytes.end(), t.payload.begin(), t.payload.end());
    write_file_atomic(path, bytes.data(), bytes.size());
}

NtrTensor read_ntr(const fs::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(4, "magic");
    if (std::memcmp(magic, "NTR1", 4) != 0) {
        throw DataError("ntr: bad magic in " + path.string());
    }
    NtrTensor t = parse_ntr_body(r);
    if (r.remaining() != 0) {
        throw DataError("ntr: trailing bytes in " + path.string());
    }
    return t;
}

void write_ntr_records(const fs::path& path, const std::vector<std::pair<std::string, NtrTensor>>& records) {
    std::vector<std::uint8_t> body;
    append_u32(body, static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, t] : records) {
        if (name.size() > 0xffff) {
            throw DataError("ntr: record name too long");
        }
        if (t.payload.size() != t.element_count() * dtype_size(t.dtype)) {
            throw DataError("ntr: payload size does not match dims for record " + name);
        }
        append_u16(body, static_cast<std::uint16_t>(name.size()));
        body.insert(body.end(), name.begin(), name.end());
        const std::string header = ntr_header(t);
        body.insert(body.end(), header.begin(), header.end());
        body.insert(body.end(), t.payload.begin(), t.payload.end());
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));

    std::vector<std::uint8_t> bytes;
    bytes.reserve(4 + body.size() + 4);
    bytes.insert(bytes.end(), {'N', 'T', 'R', '1'});
    bytes.insert(bytes.end(), body.begin(), body.end());
    append_u32(bytes, crc);
    write_file_atomic(path, bytes.data(), bytes.size());
}

std::vector<std::pair<std::string, NtrTensor>> read_ntr_records(const fs::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() < 12) {
        throw DataError("ntr: truncated file " + path.string());
    }
    if (std::memcmp(bytes.data(), "NTR1", 4) != 0) {
        throw DataError("ntr: bad magic in " + path.string());
    }
    const std::size_t body_size = bytes.size() - 8;
    const std::uint32_t stored_crc = read_u32(bytes.data() + 4 + body_size);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data() + 4), static_cast<uInt>(body_size)));
    if (crc != stored_crc) {
        throw DataError("ntr: checksum failure in " + path.string());
    }

    ByteReader r(bytes.data() + 4, body_size);
    const std::uint32_t count = read_u32(r.take(4, "record count"));
    std::vector<std::pair<std::string, NtrTensor>> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint8_t* lenp = r.take(2, "record name length");
        const std::uint16_t len = static_cast<std::uint16_t>(lenp[0] | (lenp[1] << 8));
        const std::uint8_t* namep = r.take(len, "record name");
        std::string name(reinterpret_cast<const char*>(namep), len);
        records.emplace_back(std::move(name), parse_ntr_body(r));
    }
    if (r.remaining() != 0) {
        throw DataError("ntr: trailing bytes in " + path.string());
    }
    return records;
}

NtrTensor ntr_from_tensor(const Tensor4<float>& t, bool squeeze_batch) {
    NtrTensor out;
    out.dtype = NtrDtype::F32;
    if (squeeze_batch) {
        if (t.n() != 1) {
            throw ShapeError("ntr_from_tensor: cannot squeeze batch of size " + std::to_string(t.n()));
        }
        out.dims = {static_cast<std::uint64_t>(t.c()), static_cast<std::uint64_t>(t.h()),
                    static_cast<std::uint64_t>(t.w())};
    } else {
        out.dims = {static_cast<std::uint64_t>(t.n()), static_cast<std::uint64_t>(t.c()),
                    static_cast<std::uint64_t>(t.h()), static_cast<std::uint64_t>(t.w())};
    }
    out.payload.resize(t.size() * sizeof(float));
    std::memcpy(out.payload.data(), t.data(), out.payload.size());
    return out;
}

Tensor4<float> tensor_from_ntr(const NtrTensor& t) {
    int n = 1, c = 1, h = 1, w = 1;
    if (t.dims.size() == 4) {
        n = static_cast<int>(t.dims[0]);
        c = static_cast<int>(t.dims[1]);
        h = static_cast<int>(t.dims[2]);
        w = static_cast<int>(t.dims[3]);
    } else if (t.dims.size() == 3) {
        c = static_cast<int>(t.dims[0]);
        h = static_cast<int>(t.dims[1]);
        w = static_cast<int>(t.dims[2]);
    } else if (t.dims.size() == 2) {
        h = static_cast<int>(t.dims[0]);
        w = static_cast<int>(t.dims[1]);
    } else {
        throw DataError("ntr: expected 2, 3, or 4 dims for raster, got " + std::to_string(t.dims.size()));
    }
    Tensor4<float> out(n, c, h, w);
    const std::size_t count = out.size();
    if (t.dtype == NtrDtype::U8) {
        for (std::size_t i = 0; i < count; ++i) {
            out.data()[i] = static_cast<float>(t.payload[i]) / 255.0f;
        }
    } else if (t.dtype == NtrDtype::F32) {
        std::memcpy(out.data(), t.payload.data(), count * sizeof(float));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            double v;
            std::memcpy(&v, t.payload.data() + i * 8, 8);
            out.data()[i] = static_cast<float>(v);
        }
    }
    if (!out.all_finite()) {
        throw DataError("ntr: raster contains non-finite values");
    }
    return out;
}

namespace {

// netpbm header tokens: whitespace-separated, '#' starts a comment to EOL.
long pbm_token(ByteReader& r) {
    for (;;) {
        const std::uint8_t* p = r.take(1, "netpbm header");
        if (std::isspace(*p)) {
            continue;
        }
        if (*p == '#') {
            while (*r.take(1, "netpbm comment") != '\n') {
            }
            continue;
        }
        long v = 0;
        int digits = 0;
        const std::uint8_t* q = p;
        for (;;) {
            if (!std::isdigit(*q)) {
                if (digits == 0) {
                    throw DataError("netpbm: malformed header");
                }
                break;
            }
            v = v * 10 + (*q - '0');
            if (v > (1L << 20)) {
                throw DataError("netpbm: dimension overflow");
            }
            ++digits;
            q = r.take(1, "netpbm header");
        }
        return v;
    }
}

RasterImage read_netpbm(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
    ByteReader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(2, "magic");
    const int channels = magic[1] == '5' ? 1 : 3;
    const long w = pbm_token(r);
    const long h = pbm_token(r);
    const long maxval = pbm_token(r);
    // pbm_token consumed the single whitespace after maxval as its terminator
    if (maxval != 255) {
        throw DataError("netpbm: only maxval 255 supported, got " + std::to_string(maxval) + " in " + path.string());
    }
    if (w < 1 || h < 1) {
        throw DataError("netpbm: bad dimensions in " + path.string());
    }
    const std::size_t count = static_cast<std::size_t>(w) * h * channels;
    const std::uint8_t* payload = r.take(count, "netpbm payload");
    RasterImage img(1, channels, static_cast<int>(h), static_cast<int>(w));
    // interleaved bytes -> planar floats
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                img.at(0, c, y, x) =
                    static_cast<float>(payload[(static_cast<std::size_t>(y) * w + x) * channels + c]) / 255.0f;
            }
        }
    }
    return img;
}

} // namespace

RasterImage read_raster(const fs::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "NTR1", 4) == 0) {
        ByteReader r(bytes.data(), bytes.size());
        r.take(4, "magic");
        NtrTensor t = parse_ntr_body(r);
        if (r.remaining() != 0) {
            throw DataError("ntr: trailing bytes in " + path.string());
        }
        return tensor_from_ntr(t);
    }
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
        return read_netpbm(bytes, path);
    }
    throw DataError("read_raster: bad magic in " + path.string() + " (expected P5, P6, or NTR1)");
}

void write_netpbm(const fs::path& path, const RasterImage& img) {
    if (img.n() != 1 || (img.c() != 1 && img.c() != 3)) {
        throw ShapeError("write_netpbm: raster must be (1, 1|3, h, w), got " + img.shape());
    }
    std::string header = std::string(img.c() == 1 ? "P5" : "P6") + "\n" + std::to_string(img.w()) + " " +
                         std::to_string(img.h()) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + img.size());
    for (int y = 0; y < img.h(); ++y) {
        for (int x = 0; x < img.w(); ++x) {
            for (int c = 0; c < img.c(); ++c) {
                const float v = img.at(0, c, y, x);
                const long q = std::lround(static_cast<double>(v) * 255.0);
                bytes.push_back(static_cast<std::uint8_t>(std::clamp(q, 0L, 255L)));
            }
        }
    }
    write_file_atomic(path, bytes.data(), bytes.size());
}

ClassPalette ClassPalette::isprs() {
    ClassPalette p;
    p.entries = {
        {"impervious_surfaces", {255, 255, 255}},
        {"building", {0, 0, 255}},
        {"low_vegetation", {0, 255, 255}},
        {"tree", {0, 255, 0}},
        {"car", {255, 255, 0}},
        {"clutter", {255, 0, 0}},
    };
    return p;
}

ClassPalette ClassPalette::isprs_subset(int num_classes) {
    ClassPalette full = isprs();
    if (num_classes < 1 || num_classes > full.size()) {
        throw ConfigError("palette: num_classes must be in 1.." + std::to_string(full.size()));
    }
    full.entries.resize(static_cast<std::size_t>(num_classes));
    return full;
}

LabelRaster decode_labels(const RasterImage& img, const ClassPalette& palette) {
    if (img.n() != 1 || img.c() != 3) {
        throw ShapeError("decode_labels: expected an RGB raster, got " + img.shape());
    }
    LabelRaster out(img.h(), img.w(), kIgnoreLabel);
    for (int y = 0; y < img.h(); ++y) {
        for (int x = 0; x < img.w(); ++x) {
            std::array<std::uint8_t, 3> rgb;
            for (int c = 0; c < 3; ++c) {
                rgb[c] = static_cast<std::uint8_t>(
                    std::clamp(std::lround(static_cast<double>(img.at(0, c, y, x)) * 255.0), 0L, 255L));
            }
            for (int k = 0; k < palette.size(); ++k) {
                if (palette.entries[k].second == rgb) {
                    out.at(y, x) = static_cast<std::uint8_t>(k);
                    break;
                }
            }
        }
    }
    return out;
}

RasterImage encode_labels(const LabelRaster& labels, const ClassPalette& palette) {
    RasterImage out(1, 3, labels.h, labels.w);
    for (int y = 0; y < labels.h; ++y) {
        for (int x = 0; x < labels.w; ++x) {
            const std::uint8_t v = labels.at(y, x);
            std::array<std::uint8_t, 3> rgb = {0, 0, 0};
            if (v != kIgnoreLabel) {
                if (v >= palette.size()) {
                    throw DataError("encode_labels: label " + std::to_string(v) + " outside palette of " +
                                    std::to_string(palette.size()) + " classes");
                }
                rgb = palette.entries[v].second;
            }
            for (int c = 0; c < 3; ++c) {
                out.at(0, c, y, x) = static_cast<float>(rgb[c]) / 255.0f;
            }
        }
    }
    return out;
}

std::vector<int> window_offsets(int extent, int window, int stride) {
    if (window > extent) {
        throw DataError("window_offsets: window " + std::to_string(window) + " exceeds extent " +
                        std::to_string(extent));
    }
    if (stride < 1) {
        throw ConfigError("window_offsets: stride must be >= 1");
    }
    std::vector<int> offsets;
    for (int y = 0;; y += stride) {
        if (y + window >= extent) {
            offsets.push_back(extent - window);
            break;
        }
        offsets.push_back(y);
    }
    return offsets;
}

PatchSet sample_patches(const RasterImage& image, const LabelRaster& labels, int patch, int stride) {
    if (image.n() != 1) {
        throw ShapeError("sample_patches: expected a single tile");
    }
    if (labels.h != image.h() || labels.w != image.w()) {
        throw ShapeError("sample_patches: label raster does not match image dims");
    }
    if (patch > std::min(image.h(), image.w())) {
        throw DataError("sample_patches: patch " + std::to_string(patch) + " larger than tile " +
                        std::to_string(image.h()) + "x" + std::to_string(image.w()));
    }
    const std::vector<int> ys = window_offsets(image.h(), patch, stride);
    const std::vector<int> xs = window_offsets(image.w(), patch, stride);
    PatchSet out;
    out.reserve(ys.size() * xs.size());
    for (int oy : ys) {
        for (int ox : xs) {
            Patch p;
            p.image = Tensor4<float>(1, image.c(), patch, patch);
            p.labels = LabelRaster(patch, patch);
            for (int c = 0; c < image.c(); ++c) {
                for (int y = 0; y < patch; ++y) {
                    const float* src = image.plane(0, c) + static_cast<std::size_t>(oy + y) * image.w() + ox;
                    std::copy(src, src + patch, p.image.plane(0, c) + static_cast<std::size_t>(y) * patch);
                }
            }
            for (int y = 0; y < patch; ++y) {
                const std::uint8_t* src = labels.v.data() + static_cast<std::size_t>(oy + y) * labels.w + ox;
                std::copy(src, src + patch, p.labels.v.data() + static_cast<std::size_t>(y) * patch);
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

Tensor4<float> flip_image(const Tensor4<float>& t, bool horizontal, bool vertical) {
    Tensor4<float> out = zeros_like(t);
    for (int n = 0; n < t.n(); ++n) {
        for (int c = 0; c < t.c(); ++c) {
            for (int y = 0; y < t.h(); ++y) {
                const int sy = vertical ? t.h() - 1 - y : y;
                for (int x = 0; x < t.w(); ++x) {
                    const int sx = horizontal ? t.w() - 1 - x : x;
                    out.at(n, c, y, x) = t.at(n, c, sy, sx);
                }
            }
        }
    }
    return out;
}

LabelRaster flip_labels(const LabelRaster& l, bool horizontal, bool vertical) {
    LabelRaster out(l.h, l.w);
    for (int y = 0; y < l.h; ++y) {
        const int sy = vertical ? l.h - 1 - y : y;
        for (int x = 0; x < l.w; ++x) {
            const int sx = horizontal ? l.w - 1 - x : x;
            out.at(y, x) = l.at(sy, sx);
        }
    }
    return out;
}

PatchSet augment_flips(const PatchSet& patches, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    PatchSet out;
    out.reserve(patches.size());
    for (const Patch& p : patches) {
        const double u = uniform();
        if (u < 0.75) {
            const int mode = static_cast<int>(uniform() * 3.0); // 0: h, 1: v, 2: both
            const bool hor = mode == 0 || mode == 2;
            const bool ver = mode == 1 || mode == 2;
            Patch q;
            q.image = flip_image(p.image, hor, ver);
            q.labels = flip_labels(p.labels, hor, ver);
            out.push_back(std::move(q));
        } else {
            out.push_back(p);
        }
    }
    return out;
}

Tensor4<float> stitch_predict(const Model<float>& model, const RasterImage& tile, int patch, int overlap) {
    if (tile.n() != 1) {
        throw ShapeError("stitch_predict: expected a single tile");
    }
    if (tile.h() < patch || tile.w() < patch) {
        throw DataError("stitch_predict: tile " + std::to_string(tile.h()) + "x" + std::to_string(tile.w()) +
                        " smaller than window " + std::to_string(patch));
    }
    if (overlap < 0 || overlap >= patch) {
        throw ConfigError("stitch_predict: overlap must be in [0, patch)");
    }
    const int stride = patch - overlap;
    const std::vector<int> ys = window_offsets(tile.h(), patch, stride);
    const std::vector<int> xs = window_offsets(tile.w(), patch, stride);

    const int M = model.num_classes;
    Tensor4<float> sums(1, M, tile.h(), tile.w());
    std::vector<float> counts(static_cast<std::size_t>(tile.h()) * tile.w(), 0.0f);

    Tensor4<float> window(1, tile.c(), patch, patch);
    for (int oy : ys) {
        for (int ox : xs) {
            for (int c = 0; c < tile.c(); ++c) {
                for (int y = 0; y < patch; ++y) {
                    const float* src = tile.plane(0, c) + static_cast<std::size_t>(oy + y) * tile.w() + ox;
                    std::copy(src, src + patch, window.plane(0, c) + static_cast<std::size_t>(y) * patch);
                }
            }
            const Tensor4<float> probs = predict(model, window);
            for (int c = 0; c < M; ++c) {
                for (int y = 0; y < patch; ++y) {
                    float* dst = sums.plane(0, c) + static_cast<std::size_t>(oy + y) * tile.w() + ox;
                    const float* src = probs.plane(0, c) + static_cast<std::size_t>(y) * patch;
                    for (int x = 0; x < patch; ++x) {
                        dst[x] += src[x];
                    }
                }
            }
            for (int y = 0; y < patch; ++y) {
                float* cnt = counts.data() + static_cast<std::size_t>(oy + y) * tile.w() + ox;
                for (int x = 0; x < patch; ++x) {
                    cnt[x] += 1.0f;
                }
            }
        }
    }
    for (int c = 0; c < M; ++c) {
        float* plane = sums.plane(0, c);
        for (std::size_t i = 0; i < counts.size(); ++i) {
            plane[i] /= counts[i];
        }
    }
    return sums;
}

LabelRaster argmax_labels(const Tensor4<float>& probs) {
    if (probs.n() != 1) {
        throw ShapeError("argmax_labels: expected a single tile volume");
    }
    LabelRaster out(probs.h(), probs.w());
    const std::size_t S = static_cast<std::size_t>(probs.h()) * probs.w();
    if (probs.c() == 1) {
        const float* p = probs.plane(0, 0);
        for (std::size_t s = 0; s < S; ++s) {
            out.v[s] = p[s] > 0.5f ? 1 : 0;
        }
        return out;
    }
    for (std::size_t s = 0; s < S; ++s) {
        int best = 0;
        float bv = probs.plane(0, 0)[s];
        for (int c = 1; c < probs.c(); ++c) {
            const float v = probs.plane(0, c)[s];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        out.v[s] = static_cast<std::uint8_t>(best);
    }
    return out;
}

std::vector<std::pair<fs::path, fs::path>> pair_by_stem(const fs::path& images_dir, const fs::path& labels_dir) {
    if (!fs::is_directory(images_dir)) {
        throw DataError("images directory not found: " + images_dir.string());
    }
    if (!fs::is_directory(labels_dir)) {
        throw DataError("labels directory not found: " + labels_dir.string());
    }
    auto collect = [](const fs::path& dir, std::initializer_list<const char*> exts) {
        std::map<std::string, fs::path> stems;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            const std::string ext = entry.path().extension().string();
            for (const char* e : exts) {
                if (ext == e) {
                    stems.emplace(entry.path().stem().string(), entry.path());
                    break;
                }
            }
        }
        return stems;
    };
    const auto images = collect(images_dir, {".ppm", ".pgm", ".ntr"});
    const auto labels = collect(labels_dir, {".ppm"});

    std::string unpaired;
    for (const auto& [stem, p] : images) {
        if (!labels.contains(stem)) {
            unpaired += (unpaired.empty() ? "" : ", ") + stem;
        }
    }
    for (const auto& [stem, p] : labels) {
        if (!images.contains(stem)) {
            unpaired += (unpaired.empty() ? "" : ", ") + stem;
        }
    }
    if (!unpaired.empty()) {
        throw DataError("unpaired stems between " + images_dir.string() + " and " + labels_dir.string() + ": " +
                        unpaired);
    }
    if (images.empty()) {
        throw DataError("no image files found in " + images_dir.string());
    }

    std::vector<std::pair<fs::path, fs::path>> pairs;
    pairs.reserve(images.size());
    for (const auto& [stem, p] : images) {
        pairs.emplace_back(p, labels.at(stem));
    }
    return pairs;
}

} // namespace rifcn
