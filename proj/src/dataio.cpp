#include "authnet/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "authnet/error.hpp"
#include "authnet/hash.hpp"
#include "authnet/rng.hpp"

namespace authnet {

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + path);
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

std::uint64_t file_hash(const std::string& path) {
    std::string bytes = read_text_file(path);
    Fnv1a h;
    h.update(bytes.data(), bytes.size());
    return h.digest();
}

// ---- IDX ----

namespace {

std::vector<unsigned char> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) |
           (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

} // namespace

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    auto img = read_binary_file(images_path);
    if (img.size() < 16) throw FormatError(images_path + ": truncated IDX header");
    if (be32(img.data()) != 0x00000803u)
        throw FormatError(images_path + ": bad magic (want 0x00000803 image file)");
    const std::size_t n = be32(img.data() + 4);
    const std::size_t h = be32(img.data() + 8);
    const std::size_t w = be32(img.data() + 12);
    if (img.size() != 16 + n * h * w)
        throw FormatError(images_path + ": truncated payload (expected " +
                          std::to_string(16 + n * h * w) + " bytes, have " +
                          std::to_string(img.size()) + ")");

    auto lbl = read_binary_file(labels_path);
    if (lbl.size() < 8) throw FormatError(labels_path + ": truncated IDX header");
    if (be32(lbl.data()) != 0x00000801u)
        throw FormatError(labels_path + ": bad magic (want 0x00000801 label file)");
    const std::size_t ln = be32(lbl.data() + 4);
    if (lbl.size() != 8 + ln)
        throw FormatError(labels_path + ": truncated payload");
    if (ln != n)
        throw FormatError("image/label count mismatch: " + std::to_string(n) +
                          " images vs " + std::to_string(ln) + " labels");

    IdxDataset ds;
    ds.images = Tensor({n, 1, h, w});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n * h * w; ++i)
        ds.images[i] = static_cast<double>(img[16 + i]) / 255.0;
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<int>(lbl[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

void save_idx(const IdxDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    auto [c, h, w] = ds.sample_shape();
    if (c != 1) throw ValueError("save_idx supports single-channel images only");
    const std::size_t n = ds.size();
    std::string img;
    img.reserve(16 + n * h * w);
    put_be32(img, 0x00000803u);
    put_be32(img, static_cast<std::uint32_t>(n));
    put_be32(img, static_cast<std::uint32_t>(h));
    put_be32(img, static_cast<std::uint32_t>(w));
    for (std::size_t i = 0; i < n * h * w; ++i) {
        double v = std::clamp(ds.images[i], 0.0, 1.0);
        img.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    write_text_file(images_path, img);

    std::string lbl;
    lbl.reserve(8 + n);
    put_be32(lbl, 0x00000801u);
    put_be32(lbl, static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i)
        lbl.push_back(static_cast<char>(static_cast<unsigned char>(ds.labels[i])));
    write_text_file(labels_path, lbl);
}

// ---- synthetic blobs ----

IdxDataset gen_synthetic(std::size_t classes, std::size_t per_class,
                         std::array<std::size_t, 3> shape, double separation,
                         std::uint64_t seed) {
    if (classes == 0 || per_class == 0)
        throw ValueError("gen_synthetic: classes and per_class must be positive");
    const auto [c, h, w] = shape;
    const std::size_t d = c * h * w;
    const std::size_t n = classes * per_class;
    Rng rng(seed);

    std::vector<std::vector<double>> means(classes, std::vector<double>(d));
    for (auto& m : means)
        for (double& v : m) v = 0.5 + 0.25 * separation * rng.gaussian();

    IdxDataset ds;
    ds.images = Tensor({n, c, h, w});
    ds.labels.resize(n);
    ds.num_classes = classes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % classes;
        ds.labels[i] = static_cast<int>(cls);
        double* px = ds.images.data() + i * d;
        for (std::size_t j = 0; j < d; ++j)
            px[j] = std::clamp(means[cls][j] + 0.08 * rng.gaussian(), 0.0, 1.0);
    }
    return ds;
}

// ---- procedural digits ----

namespace {

struct Stroke {
    bool closed;
    std::vector<std::array<double, 2>> pts;
};

std::vector<std::array<double, 2>> circle_pts(double cx, double cy, double rx, double ry,
                                              int n) {
    std::vector<std::array<double, 2>> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * M_PI * static_cast<double>(i) / n;
        pts.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return pts;
}

const std::vector<std::vector<Stroke>>& glyph_table() {
    static const std::vector<std::vector<Stroke>> glyphs = [] {
        std::vector<std::vector<Stroke>> g(10);
        g[0] = {{true, circle_pts(0.50, 0.50, 0.26, 0.36, 20)}};
        g[1] = {{false, {{0.36, 0.26}, {0.54, 0.12}}}, {false, {{0.54, 0.12}, {0.54, 0.88}}}};
        g[2] = {{false,
                 {{0.30, 0.30}, {0.31, 0.20}, {0.40, 0.12}, {0.54, 0.10}, {0.66, 0.14},
                  {0.71, 0.25}, {0.68, 0.38}, {0.57, 0.52}, {0.43, 0.66}, {0.30, 0.82}}},
                {false, {{0.30, 0.86}, {0.74, 0.86}}}};
        g[3] = {{false,
                 {{0.31, 0.17}, {0.42, 0.11}, {0.56, 0.10}, {0.67, 0.17}, {0.69, 0.29},
                  {0.62, 0.40}, {0.50, 0.46}}},
                {false,
                 {{0.50, 0.46}, {0.64, 0.51}, {0.71, 0.62}, {0.68, 0.76}, {0.56, 0.87},
                  {0.41, 0.88}, {0.30, 0.80}}}};
        g[4] = {{false, {{0.60, 0.10}, {0.27, 0.57}}},
                {false, {{0.27, 0.57}, {0.78, 0.57}}},
                {false, {{0.62, 0.30}, {0.62, 0.90}}}};
        g[5] = {{false, {{0.70, 0.12}, {0.34, 0.12}}},
                {false, {{0.34, 0.12}, {0.31, 0.44}}},
                {false,
                 {{0.31, 0.44}, {0.46, 0.38}, {0.61, 0.41}, {0.70, 0.52}, {0.71, 0.67},
                  {0.62, 0.81}, {0.46, 0.88}, {0.31, 0.80}}}};
        g[6] = {{false,
                 {{0.64, 0.12}, {0.50, 0.10}, {0.38, 0.20}, {0.30, 0.38}, {0.27, 0.58},
                  {0.31, 0.76}, {0.44, 0.88}, {0.58, 0.86}, {0.68, 0.74}, {0.69, 0.60},
                  {0.60, 0.50}, {0.45, 0.49}, {0.33, 0.58}}}};
        g[7] = {{false, {{0.26, 0.13}, {0.75, 0.13}}},
                {false, {{0.75, 0.13}, {0.45, 0.88}}}};
        g[8] = {{true, circle_pts(0.50, 0.29, 0.17, 0.165, 14)},
                {true, circle_pts(0.50, 0.65, 0.215, 0.215, 16)}};
        g[9] = {{true, circle_pts(0.47, 0.32, 0.185, 0.18, 14)},
                {false, {{0.655, 0.36}, {0.64, 0.60}, {0.55, 0.88}}}};
        return g;
    }();
    return glyphs;
}

double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = ax + t * dx - px, qy = ay + t * dy - py;
    return std::sqrt(qx * qx + qy * qy);
}

void render_digit(int digit, Rng& rng, double* out28x28) {
    const int S = 28;
    std::vector<Stroke> strokes = glyph_table()[static_cast<std::size_t>(digit)];

    // Geometric ranges are deliberately wide: with narrow jitter the classes
    // are nearly noise-free and the trained features are too brittle to
    // survive masked or offset inputs. Dark ink on a bright field matters
    // too: a bright background keeps some feature channels firing on every
    // input, which anchors the global image statistics that downstream
    // perturbation searches would otherwise wash out for free.
    const double rot = rng.uniform(-0.30, 0.30);
    const double sx = rng.uniform(0.80, 1.20), sy = rng.uniform(0.80, 1.20);
    const double shear = rng.uniform(-0.20, 0.20);
    const double tx = rng.uniform(-0.10, 0.10), ty = rng.uniform(-0.10, 0.10);
    const double wob_ax = rng.uniform(0.0, 0.05), wob_ay = rng.uniform(0.0, 0.05);
    const double wob_fx = rng.uniform(0.5, 2.0), wob_fy = rng.uniform(0.5, 2.0);
    const double wob_px = rng.uniform(0.0, 1.0), wob_py = rng.uniform(0.0, 1.0);
    const double thick = rng.uniform(0.9, 2.2); // pixels
    const double bg = rng.uniform(0.88, 1.0);
    const double ink = rng.uniform(0.75, 0.95);
    const double jit = rng.uniform(0.005, 0.03);
    const double cr = std::cos(rot), sr = std::sin(rot);

    // Structural variation: each control point of the glyph moves a little,
    // so two samples of the same digit differ in shape and not only in pose.
    for (Stroke& st : strokes)
        for (auto& p : st.pts) {
            p[0] += rng.uniform(-jit, jit);
            p[1] += rng.uniform(-jit, jit);
        }

    auto xform = [&](std::array<double, 2> p) {
        double x = p[0] - 0.5, y = p[1] - 0.5;
        x += shear * y;
        x *= sx;
        y *= sy;
        const double xr = cr * x - sr * y, yr = sr * x + cr * y;
        x = xr + 0.5 + tx;
        y = yr + 0.5 + ty;
        x += wob_ax * std::sin(2.0 * M_PI * (wob_fx * y + wob_px));
        y += wob_ay * std::sin(2.0 * M_PI * (wob_fy * x + wob_py));
        return std::array<double, 2>{x, y};
    };

    std::fill(out28x28, out28x28 + S * S, 0.0);

    for (const Stroke& st : strokes) {
        // Subdivide, transform, then rasterise each small segment.
        std::vector<std::array<double, 2>> path;
        const std::size_t np = st.pts.size();
        const std::size_t nseg = st.closed ? np : np - 1;
        for (std::size_t si = 0; si < nseg; ++si) {
            const auto& a = st.pts[si];
            const auto& b = st.pts[(si + 1) % np];
            const double seg_len = std::hypot(b[0] - a[0], b[1] - a[1]);
            const int pieces = std::max(1, static_cast<int>(std::ceil(seg_len / 0.04)));
            for (int k = 0; k < pieces; ++k) {
                const double t = static_cast<double>(k) / pieces;
                path.push_back(xform({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}));
            }
        }
        path.push_back(st.closed ? path.front()
                                 : xform(st.pts.back()));

        for (std::size_t si = 0; si + 1 < path.size(); ++si) {
            const double ax = path[si][0] * S, ay = path[si][1] * S;
            const double bx = path[si + 1][0] * S, by = path[si + 1][1] * S;
            const double pad = thick + 1.5;
            const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - pad)));
            const int x1 = std::min(S - 1, static_cast<int>(std::ceil(std::max(ax, bx) + pad)));
            const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - pad)));
            const int y1 = std::min(S - 1, static_cast<int>(std::ceil(std::max(ay, by) + pad)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double d =
                        dist_to_segment(x + 0.5, y + 0.5, ax, ay, bx, by);
                    const double v = std::clamp((thick + 0.6 - d) / 1.2, 0.0, 1.0);
                    double& px = out28x28[y * S + x];
                    px = std::max(px, v);
                }
        }
    }

    for (int i = 0; i < S * S; ++i) {
        double v = bg - out28x28[i] * ink;
        v += rng.uniform(-0.03, 0.03);
        if (rng.uniform() < 0.006) v -= rng.uniform(0.0, 0.30);
        v = std::clamp(v, 0.0, 1.0);
        out28x28[i] = std::round(v * 255.0) / 255.0;
    }
}

} // namespace

IdxDataset gen_digits(std::size_t count, std::uint64_t seed) {
    if (count == 0) throw ValueError("gen_digits: count must be positive");
    IdxDataset ds;
    ds.images = Tensor({count, 1, 28, 28});
    ds.labels.resize(count);
    ds.num_classes = 10;
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = static_cast<int>(i % 10);
        render_digit(ds.labels[i], rng, ds.images.data() + i * 28 * 28);
    }
    // One joint permutation so class order is not positional.
    std::vector<std::size_t> perm(count);
    for (std::size_t i = 0; i < count; ++i) perm[i] = i;
    rng.shuffle(perm);
    IdxDataset out = gather_dataset(ds, perm);
    return out;
}

// ---- manifest helpers ----

namespace {

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64_le(std::string& out, double d) {
    append_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

struct Manifest {
    std::vector<std::pair<std::string, std::string>> kv;
    std::size_t payload_offset = 0; // into the raw file bytes

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : kv)
            if (k == key) return &v;
        return nullptr;
    }
    std::string need(const std::string& key, const std::string& path) const {
        const std::string* v = find(key);
        if (!v) throw FormatError(path + ": missing manifest field '" + key + "'");
        return *v;
    }
};

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw FormatError("cannot parse number '" + s + "' for " + what);
    }
}

long parse_long(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw FormatError("cannot parse integer '" + s + "' for " + what);
    }
}

// Reads the text manifest of a container file and verifies both hashes.
// Returns the parsed fields plus where the blob payload starts.
Manifest read_container(const std::string& path, const std::string& magic,
                        const std::vector<unsigned char>& bytes) {
    Manifest m;
    std::size_t pos = 0;
    bool first = true, saw_sep = false;
    std::size_t manifest_hash_line_start = 0;
    std::string manifest_hash_value;
    while (pos < bytes.size()) {
        std::size_t eol = pos;
        while (eol < bytes.size() && bytes[eol] != '\n') ++eol;
        if (eol == bytes.size())
            throw FormatError(path + ": truncated manifest (no separator line)");
        std::string line(reinterpret_cast<const char*>(bytes.data() + pos), eol - pos);
        if (first) {
            if (line != magic)
                throw FormatError(path + ": bad magic line '" + line + "' (want '" +
                                  magic + "')");
            first = false;
        } else if (line == "---") {
            m.payload_offset = eol + 1;
            saw_sep = true;
            break;
        } else {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw FormatError(path + ": manifest line without '=': " + line);
            std::string key = line.substr(0, eq);
            std::string val = line.substr(eq + 1);
            if (key == "manifest_hash") {
                manifest_hash_line_start = pos;
                manifest_hash_value = val;
            }
            m.kv.emplace_back(std::move(key), std::move(val));
        }
        pos = eol + 1;
    }
    if (!saw_sep) throw FormatError(path + ": missing '---' separator");
    if (manifest_hash_value.empty())
        throw FormatError(path + ": missing manifest_hash");

    Fnv1a mh;
    mh.update(bytes.data(), manifest_hash_line_start);
    if (hex64(mh.digest()) != manifest_hash_value)
        throw FormatError(path + ": manifest hash mismatch (file corrupted?)");

    const std::string payload_hash = m.need("payload_hash", path);
    Fnv1a ph;
    ph.update(bytes.data() + m.payload_offset, bytes.size() - m.payload_offset);
    if (hex64(ph.digest()) != payload_hash)
        throw FormatError(path + ": payload hash mismatch (file corrupted?)");
    return m;
}

std::vector<Tensor> read_blobs(const std::string& path,
                               const std::vector<unsigned char>& bytes,
                               std::size_t offset, std::size_t expect_count) {
    std::vector<Tensor> blobs;
    std::size_t pos = offset;
    for (std::size_t b = 0; b < expect_count; ++b) {
        if (pos + 8 > bytes.size())
            throw FormatError(path + ": truncated blob header");
        const std::uint64_t n = get_u64_le(bytes.data() + pos);
        pos += 8;
        if (pos + n * 8 > bytes.size())
            throw FormatError(path + ": truncated blob payload");
        Tensor t({static_cast<std::size_t>(n)});
        for (std::size_t i = 0; i < n; ++i)
            t[i] = std::bit_cast<double>(get_u64_le(bytes.data() + pos + i * 8));
        pos += n * 8;
        blobs.push_back(std::move(t));
    }
    if (pos != bytes.size())
        throw FormatError(path + ": trailing bytes after blobs");
    return blobs;
}

void write_container(const std::string& path, const std::string& magic,
                     std::vector<std::pair<std::string, std::string>> kv,
                     const std::vector<const Tensor*>& blobs) {
    std::string payload;
    for (const Tensor* t : blobs) {
        append_u64_le(payload, t->size());
        for (std::size_t i = 0; i < t->size(); ++i) append_f64_le(payload, (*t)[i]);
    }
    Fnv1a ph;
    ph.update(payload.data(), payload.size());
    kv.emplace_back("blobs", std::to_string(blobs.size()));
    kv.emplace_back("payload_hash", hex64(ph.digest()));

    std::string text = magic + "\n";
    for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
    Fnv1a mh;
    mh.update(text.data(), text.size());
    text += "manifest_hash=" + hex64(mh.digest()) + "\n---\n";
    write_text_file(path, text + payload);
}

Layer parse_layer_desc(const std::string& desc, const std::string& path) {
    std::istringstream is(desc);
    std::string kind;
    is >> kind;
    std::vector<std::pair<std::string, std::size_t>> args;
    std::string tok;
    while (is >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw FormatError(path + ": bad layer argument '" + tok + "'");
        args.emplace_back(tok.substr(0, eq),
                          static_cast<std::size_t>(
                              parse_long(tok.substr(eq + 1), "layer argument")));
    }
    auto get = [&](const std::string& name, std::size_t dflt,
                   bool required = false) -> std::size_t {
        for (const auto& [k, v] : args)
            if (k == name) return v;
        if (required)
            throw FormatError(path + ": layer '" + kind + "' missing argument '" + name + "'");
        return dflt;
    };
    if (kind == "conv2d") {
        Layer l = conv2d(get("out", 0, true), get("k", 0, true), get("s", 1), get("p", 0));
        l.in_channels = get("in", 0);
        return l;
    }
    if (kind == "relu") return relu();
    if (kind == "avgpool2d") return avgpool2d(get("k", 0, true));
    if (kind == "flatten") return flatten();
    if (kind == "linear") return linear(get("in", 0), get("out", 0, true));
    throw FormatError(path + ": unknown layer kind '" + kind + "'");
}

std::array<std::size_t, 3> parse_shape3(const std::string& s, const std::string& path) {
    std::array<std::size_t, 3> out{};
    std::istringstream is(s);
    std::string part;
    for (int i = 0; i < 3; ++i) {
        if (!std::getline(is, part, ','))
            throw FormatError(path + ": bad input shape '" + s + "'");
        out[static_cast<std::size_t>(i)] =
            static_cast<std::size_t>(parse_long(part, "input shape"));
    }
    if (std::getline(is, part, ','))
        throw FormatError(path + ": bad input shape '" + s + "'");
    return out;
}

SequentialModel model_from_manifest(const Manifest& m, const std::string& path) {
    SequentialModel model;
    model.input_shape = parse_shape3(m.need("input", path), path);
    model.num_classes = static_cast<std::size_t>(
        parse_long(m.need("classes", path), "classes"));
    for (std::size_t i = 0;; ++i) {
        const std::string* desc = m.find("layer." + std::to_string(i));
        if (!desc) break;
        model.layers.push_back(parse_layer_desc(*desc, path));
    }
    if (model.layers.empty()) throw FormatError(path + ": no layers in manifest");
    return model;
}

} // namespace

// ---- checkpoints ----

void save_checkpoint(const SequentialModel& model, const CheckpointMeta& meta,
                     const std::string& path) {
    layer_shapes(model);
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("input", std::to_string(model.input_shape[0]) + "," +
                                 std::to_string(model.input_shape[1]) + "," +
                                 std::to_string(model.input_shape[2]));
    kv.emplace_back("classes", std::to_string(model.num_classes));
    if (meta.seg_index >= 0)
        kv.emplace_back("seg_index", std::to_string(meta.seg_index));
    if (!meta.note.empty()) {
        std::string note = meta.note;
        for (char& ch : note)
            if (ch == '\n' || ch == '\r') ch = ' ';
        kv.emplace_back("note", note);
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        kv.emplace_back("layer." + std::to_string(i), model.layers[i].describe());

    write_container(path, "AUTHNETCKPT v1", std::move(kv), param_tensors(model));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    auto bytes = read_binary_file(path);
    Manifest m = read_container(path, "AUTHNETCKPT v1", bytes);

    LoadedCheckpoint out;
    out.model = model_from_manifest(m, path);
    resolve_shapes(out.model);

    const auto expect = static_cast<std::size_t>(
        parse_long(m.need("blobs", path), "blobs"));
    auto params = param_tensors(out.model);
    if (params.size() != expect)
        throw FormatError(path + ": blob count " + std::to_string(expect) +
                          " does not match architecture (" +
                          std::to_string(params.size()) + " parameter tensors)");
    auto blobs = read_blobs(path, bytes, m.payload_offset, expect);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (blobs[i].size() != params[i]->size())
            throw FormatError(path + ": blob " + std::to_string(i) + " has " +
                              std::to_string(blobs[i].size()) + " values, expected " +
                              std::to_string(params[i]->size()));
        std::copy(blobs[i].data(), blobs[i].data() + blobs[i].size(), params[i]->data());
    }

    if (const std::string* seg = m.find("seg_index"))
        out.meta.seg_index = parse_long(*seg, "seg_index");
    if (const std::string* note = m.find("note")) out.meta.note = *note;
    return out;
}

// ---- key files ----

void save_key(const AuthKey& key, const std::string& path) {
    if (key.offset.ndim() != 3 || key.mask.ndim() != 2)
        throw ValueError("save_key: malformed key tensors");
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("channels", std::to_string(key.offset.extent(0)));
    kv.emplace_back("height", std::to_string(key.offset.extent(1)));
    kv.emplace_back("width", std::to_string(key.offset.extent(2)));
    kv.emplace_back("eps_mask", csv_num(key.eps_mask));
    kv.emplace_back("eps_offset", csv_num(key.eps_offset));
    kv.emplace_back("literal_mask_box", key.literal_mask_box ? "1" : "0");
    kv.emplace_back("gamma", csv_num(key.gamma));
    kv.emplace_back("seg_index", std::to_string(key.seg_index));
    std::string bits;
    for (std::size_t i = 0; i < key.bits.indices.size(); ++i) {
        if (i) bits += ",";
        bits += std::to_string(key.bits.indices[i]);
    }
    kv.emplace_back("auth_bits", bits);
    write_container(path, "AUTHNETKEY v1", std::move(kv), {&key.mask, &key.offset});
}

AuthKey load_key(const std::string& path) {
    auto bytes = read_binary_file(path);
    Manifest m = read_container(path, "AUTHNETKEY v1", bytes);

    AuthKey key;
    const auto c = static_cast<std::size_t>(parse_long(m.need("channels", path), "channels"));
    const auto h = static_cast<std::size_t>(parse_long(m.need("height", path), "height"));
    const auto w = static_cast<std::size_t>(parse_long(m.need("width", path), "width"));
    key.eps_mask = parse_double(m.need("eps_mask", path), "eps_mask");
    key.eps_offset = parse_double(m.need("eps_offset", path), "eps_offset");
    key.literal_mask_box = m.need("literal_mask_box", path) == "1";
    key.gamma = parse_double(m.need("gamma", path), "gamma");
    key.seg_index = static_cast<std::size_t>(
        parse_long(m.need("seg_index", path), "seg_index"));
    const std::string bits = m.need("auth_bits", path);
    std::istringstream bs(bits);
    std::string part;
    while (std::getline(bs, part, ','))
        key.bits.indices.push_back(
            static_cast<std::size_t>(parse_long(part, "auth_bits")));
    if (key.bits.indices.empty())
        throw FormatError(path + ": empty auth_bits list");

    const auto expect = static_cast<std::size_t>(parse_long(m.need("blobs", path), "blobs"));
    if (expect != 2) throw FormatError(path + ": key file must hold 2 blobs");
    auto blobs = read_blobs(path, bytes, m.payload_offset, 2);
    if (blobs[0].size() != h * w)
        throw FormatError(path + ": mask blob size mismatch");
    if (blobs[1].size() != c * h * w)
        throw FormatError(path + ": offset blob size mismatch");
    key.mask = blobs[0].reshaped({h, w});
    key.offset = blobs[1].reshaped({c, h, w});

    validate_key(key, {c, h, w}); // throws ConstraintError outside the box
    return key;
}

// ---- CSV ----

std::string csv_num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string csv_num(std::size_t v) { return std::to_string(v); }

namespace {

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') out += "\"\"";
        else out += ch;
    }
    out += "\"";
    return out;
}

} // namespace

void export_csv(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
    if (header.empty()) throw ValueError("export_csv: header is mandatory");
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out += ",";
        out += csv_escape(header[i]);
    }
    out += "\r\n";
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw ValueError("export_csv: row width " + std::to_string(row.size()) +
                             " != header width " + std::to_string(header.size()));
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            out += csv_escape(row[i]);
        }
        out += "\r\n";
    }
    write_text_file(path, out);
}

} // namespace authnet
