#include "gshdr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace gshdr::data {

namespace {

std::string dirname_of(const std::string& path) {
    const auto pos = path.find_last_of('/');
    return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

std::string resolve(const std::string& base, const std::string& rel) {
    if (!rel.empty() && rel[0] == '/') return rel;
    return base + "/" + rel;
}

double parse_number(const std::string& tok, const std::string& ctx) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (...) {
        fail(ErrorKind::Format, ctx + ": bad number '" + tok + "'");
    }
}

void check_image(const io::Image& img, const char* who) {
    if (!img.defined() || img.rank() != 3 || img.dim(0) != 3)
        fail(ErrorKind::Shape, std::string(who) + ": expected a (3,H,W) image");
}

io::Image crop_image(const io::Image& img, i64 top, i64 left, i64 size) {
    const i64 h = img.dim(1), w = img.dim(2);
    io::Image out(Shape{3, size, size});
    for (i64 c = 0; c < 3; ++c)
        for (i64 y = 0; y < size; ++y)
            for (i64 x = 0; x < size; ++x)
                out[(c * size + y) * size + x] = img[(c * h + top + y) * w + left + x];
    return out;
}

io::Image hflip_image(const io::Image& img) {
    const i64 h = img.dim(1), w = img.dim(2);
    io::Image out(img.shape());
    for (i64 c = 0; c < 3; ++c)
        for (i64 y = 0; y < h; ++y)
            for (i64 x = 0; x < w; ++x)
                out[(c * h + y) * w + x] = img[(c * h + y) * w + (w - 1 - x)];
    return out;
}

// Quarter turn counterclockwise: out(y, x) = in(x, W-1-y); (3,H,W) -> (3,W,H).
io::Image rot90_image(const io::Image& img) {
    const i64 h = img.dim(1), w = img.dim(2);
    io::Image out(Shape{3, w, h});
    for (i64 c = 0; c < 3; ++c)
        for (i64 y = 0; y < w; ++y)
            for (i64 x = 0; x < h; ++x)
                out[(c * w + y) * h + x] = img[(c * h + x) * w + (w - 1 - y)];
    return out;
}

io::Image transform_image(const io::Image& img, int code) {
    io::Image out = img;
    if (code & 4) out = hflip_image(out);
    for (int i = 0; i < (code & 3); ++i) out = rot90_image(out);
    return out;
}

}  // namespace

StackManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for reading");
    StackManifest m;
    int images = 0;
    bool gt_seen = false, scale_seen = false;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string a, b, extra;
        if (!(ss >> a >> b) || (ss >> extra))
            fail(ErrorKind::Format, path + ": expected two fields per line, got '" + line + "'");
        if (a == "gt") {
            if (gt_seen) fail(ErrorKind::Format, path + ": duplicate gt line");
            m.gt_path = b;
            gt_seen = true;
        } else if (a == "scale") {
            if (scale_seen) fail(ErrorKind::Format, path + ": duplicate scale line");
            m.gt_scale = parse_number(b, path);
            if (!(m.gt_scale > 0)) fail(ErrorKind::Format, path + ": scale must be > 0");
            scale_seen = true;
        } else {
            if (images >= 3) fail(ErrorKind::Format, path + ": more than 3 image lines");
            m.paths[static_cast<std::size_t>(images)] = a;
            m.stops[static_cast<std::size_t>(images)] = parse_number(b, path);
            ++images;
        }
    }
    if (images != 3)
        fail(ErrorKind::Format,
             path + ": expected 3 image lines, found " + std::to_string(images));
    if (!(m.stops[0] < m.stops[1] && m.stops[1] < m.stops[2]))
        fail(ErrorKind::Format, path + ": stops must be strictly increasing");
    return m;
}

void write_manifest(const std::string& path, const StackManifest& m) {
    std::ofstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    for (int k = 0; k < 3; ++k)
        f << m.paths[static_cast<std::size_t>(k)] << " " << m.stops[static_cast<std::size_t>(k)]
          << "\n";
    if (!m.gt_path.empty()) f << "gt " << m.gt_path << "\n";
    if (m.gt_scale != 1.0) f << "scale " << m.gt_scale << "\n";
    if (!f) fail(ErrorKind::Io, "write failed for " + path);
}

Sample load_sample(const std::string& manifest_path, double gamma) {
    const StackManifest m = read_manifest(manifest_path);
    const std::string base = dirname_of(manifest_path);
    Sample s;
    s.stack.gamma = gamma;
    for (int k = 0; k < 3; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        s.stack.ldr[kk] = io::read_image(resolve(base, m.paths[kk]));
        s.stack.t[kk] = std::exp2(m.stops[kk] - m.stops[1]);
    }
    const Shape ref = s.stack.ldr[0].shape();
    for (int k = 1; k < 3; ++k)
        if (s.stack.ldr[static_cast<std::size_t>(k)].shape() != ref)
            fail(ErrorKind::Shape, manifest_path + ": stack images disagree in size");
    if (!m.gt_path.empty()) {
        s.gt = io::read_image(resolve(base, m.gt_path));
        if (s.gt.shape() != ref)
            fail(ErrorKind::Shape, manifest_path + ": gt size does not match the stack");
        const float inv = static_cast<float>(1.0 / m.gt_scale);
        for (i64 i = 0; i < s.gt.numel(); ++i)
            s.gt[i] = std::clamp(s.gt[i] * inv, 0.0f, 1.0f);
    }
    return s;
}

Tensor<float> gamma_normalize(const Tensor<float>& I, double t, double gamma) {
    if (!I.defined()) fail(ErrorKind::Shape, "gamma_normalize: undefined image");
    if (!(t > 0)) fail(ErrorKind::Value, "gamma_normalize: exposure time must be > 0");
    Tensor<float> out(I.shape());
    const float g = static_cast<float>(gamma), inv_t = static_cast<float>(1.0 / t);
    for (i64 i = 0; i < I.numel(); ++i) out[i] = std::pow(I[i], g) * inv_t;
    return out;
}

std::pair<Tensor<float>, Tensor<float>> build_input(const ExposureStack& s) {
    for (const auto& img : s.ldr) check_image(img, "build_input");
    if (!(s.t[0] < s.t[1] && s.t[1] < s.t[2]))
        fail(ErrorKind::Value, "build_input: exposure times must be strictly increasing");
    const Shape ref = s.ldr[0].shape();
    for (int k = 1; k < 3; ++k)
        if (s.ldr[static_cast<std::size_t>(k)].shape() != ref)
            fail(ErrorKind::Shape, "build_input: stack images disagree in size");

    const i64 h = ref[1], w = ref[2], plane = h * w;
    Tensor<float> x(Shape{1, 18, h, w});
    Tensor<float> x2(Shape{1, 6, h, w});
    for (int k = 0; k < 3; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const Tensor<float> hk = gamma_normalize(s.ldr[kk], s.t[kk], s.gamma);
        float* dst = x.data() + k * 6 * plane;
        std::copy(hk.data(), hk.data() + 3 * plane, dst);
        std::copy(s.ldr[kk].data(), s.ldr[kk].data() + 3 * plane, dst + 3 * plane);
    }
    std::copy(x.data() + 6 * plane, x.data() + 12 * plane, x2.data());
    return {x, x2};
}

std::vector<Sample> extract_patches(const Sample& s, i64 size, i64 stride) {
    for (const auto& img : s.stack.ldr) check_image(img, "extract_patches");
    if (size < 1 || stride < 1)
        fail(ErrorKind::Value, "extract_patches: size and stride must be positive");
    const i64 h = s.stack.ldr[0].dim(1), w = s.stack.ldr[0].dim(2);
    if (h < size || w < size)
        fail(ErrorKind::Shape, "extract_patches: image " + s.stack.ldr[0].shape().str() +
                                   " smaller than patch size " + std::to_string(size));
    std::vector<Sample> out;
    for (i64 top = 0; top + size <= h; top += stride)
        for (i64 left = 0; left + size <= w; left += stride) {
            Sample p;
            p.stack.t = s.stack.t;
            p.stack.gamma = s.stack.gamma;
            for (int k = 0; k < 3; ++k)
                p.stack.ldr[static_cast<std::size_t>(k)] =
                    crop_image(s.stack.ldr[static_cast<std::size_t>(k)], top, left, size);
            if (s.gt.defined()) p.gt = crop_image(s.gt, top, left, size);
            out.push_back(std::move(p));
        }
    return out;
}

Sample augment(const Sample& s, int code) {
    if (code < 0 || code > 7)
        fail(ErrorKind::Value, "augment: code must be in 0..7, got " + std::to_string(code));
    Sample out;
    out.stack.t = s.stack.t;
    out.stack.gamma = s.stack.gamma;
    for (int k = 0; k < 3; ++k) {
        check_image(s.stack.ldr[static_cast<std::size_t>(k)], "augment");
        out.stack.ldr[static_cast<std::size_t>(k)] =
            transform_image(s.stack.ldr[static_cast<std::size_t>(k)], code);
    }
    if (s.gt.defined()) out.gt = transform_image(s.gt, code);
    return out;
}

// ---- synthetic scenes -------------------------------------------------------

namespace {

struct SynthShape {
    bool square = false;
    double cx = 0, cy = 0;    // center at the middle exposure
    double radius = 4;        // circle radius or square half-side
    double vx = 0, vy = 0;    // displacement per exposure index step
    std::array<double, 3> color{};
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

// Coverage in [0, 1] with a one-pixel feather at the silhouette.
double shape_alpha(const SynthShape& s, double dx, double dy) {
    const double dist = s.square ? std::max(std::fabs(dx), std::fabs(dy))
                                 : std::sqrt(dx * dx + dy * dy);
    return std::clamp(0.5 + (s.radius - dist), 0.0, 1.0);
}

// Renders background + shapes displaced by `step` exposure indices
// relative to the middle one. Values may exceed [0,1]; callers clip.
void render_scene(std::vector<double>& scene, i64 h, i64 w, const std::vector<double>& bg,
                  const std::vector<SynthShape>& shapes, int step) {
    scene = bg;
    for (const auto& s : shapes) {
        const double cx = s.cx + s.vx * step, cy = s.cy + s.vy * step;
        const i64 y0 = std::max<i64>(0, static_cast<i64>(std::floor(cy - s.radius - 2)));
        const i64 y1 = std::min<i64>(h - 1, static_cast<i64>(std::ceil(cy + s.radius + 2)));
        const i64 x0 = std::max<i64>(0, static_cast<i64>(std::floor(cx - s.radius - 2)));
        const i64 x1 = std::min<i64>(w - 1, static_cast<i64>(std::ceil(cx + s.radius + 2)));
        for (i64 y = y0; y <= y1; ++y)
            for (i64 x = x0; x <= x1; ++x) {
                const double a = shape_alpha(s, static_cast<double>(x) - cx,
                                             static_cast<double>(y) - cy);
                if (a <= 0) continue;
                for (i64 c = 0; c < 3; ++c) {
                    double& px = scene[static_cast<std::size_t>((c * h + y) * w + x)];
                    px = a * s.color[static_cast<std::size_t>(c)] + (1.0 - a) * px;
                }
            }
    }
}

Sample synth_scene_impl(std::uint64_t seed, i64 h, i64 w, Tensor<float>* moved) {
    if (h < 32 || w < 32)
        fail(ErrorKind::Value, "synth_scene: size must be at least 32x32");
    std::mt19937_64 rng(seed);

    // Smooth background: base level, three cosine waves, one soft blob.
    std::vector<double> bg(static_cast<std::size_t>(3 * h * w));
    {
        const double base = uniform(rng, 0.25, 0.45);
        struct Wave {
            double amp, fx, fy, phase;
        };
        std::array<Wave, 3> waves{};
        for (auto& wv : waves) {
            wv.amp = uniform(rng, 0.05, 0.15);
            wv.fx = uniform(rng, 0.5, 2.0) * 2.0 * 3.14159265358979323846 / static_cast<double>(w);
            wv.fy = uniform(rng, 0.5, 2.0) * 2.0 * 3.14159265358979323846 / static_cast<double>(h);
            wv.phase = uniform(rng, 0.0, 2.0 * 3.14159265358979323846);
        }
        const double bx = uniform(rng, 0.0, static_cast<double>(w));
        const double by = uniform(rng, 0.0, static_cast<double>(h));
        const double bs = uniform(rng, static_cast<double>(w) / 8.0, static_cast<double>(w) / 3.0);
        const double ba = uniform(rng, 0.1, 0.3);
        for (i64 y = 0; y < h; ++y)
            for (i64 x = 0; x < w; ++x) {
                double v = base;
                for (const auto& wv : waves)
                    v += wv.amp * std::cos(wv.fx * static_cast<double>(x) +
                                           wv.fy * static_cast<double>(y) + wv.phase);
                const double dx = static_cast<double>(x) - bx, dy = static_cast<double>(y) - by;
                v += ba * std::exp(-(dx * dx + dy * dy) / (2.0 * bs * bs));
                for (i64 c = 0; c < 3; ++c)
                    bg[static_cast<std::size_t>((c * h + y) * w + x)] = v;
            }
    }

    const int n_shapes = 2 + static_cast<int>(rng() % 4);  // 2..5
    std::vector<SynthShape> shapes(static_cast<std::size_t>(n_shapes));
    for (auto& s : shapes) {
        s.square = uniform(rng, 0.0, 1.0) < 0.5;
        s.cx = uniform(rng, 0.0, static_cast<double>(w));
        s.cy = uniform(rng, 0.0, static_cast<double>(h));
        s.radius = uniform(rng, 4.0, static_cast<double>(std::min(h, w)) / 6.0);
        for (auto& c : s.color) c = uniform(rng, 0.0, 1.0);
        s.vx = uniform(rng, -6.0, 6.0);
        s.vy = uniform(rng, -6.0, 6.0);
        if (uniform(rng, 0.0, 1.0) < 0.3) s.vx = s.vy = 0.0;  // static shape
    }

    Sample out;
    out.stack.t = {0.25, 1.0, 4.0};
    out.stack.gamma = 2.2;
    const double inv_gamma = 1.0 / out.stack.gamma;

    std::vector<double> scene;
    render_scene(scene, h, w, bg, shapes, 0);
    out.gt = io::Image(Shape{3, h, w});
    for (i64 i = 0; i < 3 * h * w; ++i)
        out.gt[i] = static_cast<float>(std::clamp(scene[static_cast<std::size_t>(i)], 0.0, 1.0));

    for (int k = 0; k < 3; ++k) {
        render_scene(scene, h, w, bg, shapes, k - 1);
        io::Image& ldr = out.stack.ldr[static_cast<std::size_t>(k)];
        ldr = io::Image(Shape{3, h, w});
        const double t = out.stack.t[static_cast<std::size_t>(k)];
        for (i64 i = 0; i < 3 * h * w; ++i) {
            double v = std::pow(std::clamp(scene[static_cast<std::size_t>(i)] * t, 0.0, 1.0),
                                inv_gamma);
            const double noise = uniform(rng, -1.0, 1.0) / 255.0;
            if (v < 0.04) v = std::clamp(v + noise, 0.0, 1.0);
            ldr[i] = static_cast<float>(std::round(v * 255.0) / 255.0);
        }
    }

    if (moved) {
        *moved = Tensor<float>(Shape{h, w});
        for (const auto& s : shapes) {
            if (s.vx == 0.0 && s.vy == 0.0) continue;
            for (int step = -1; step <= 1; ++step) {
                const double cx = s.cx + s.vx * step, cy = s.cy + s.vy * step;
                const i64 y0 = std::max<i64>(0, static_cast<i64>(std::floor(cy - s.radius - 2)));
                const i64 y1 = std::min<i64>(h - 1, static_cast<i64>(std::ceil(cy + s.radius + 2)));
                const i64 x0 = std::max<i64>(0, static_cast<i64>(std::floor(cx - s.radius - 2)));
                const i64 x1 = std::min<i64>(w - 1, static_cast<i64>(std::ceil(cx + s.radius + 2)));
                for (i64 y = y0; y <= y1; ++y)
                    for (i64 x = x0; x <= x1; ++x)
                        if (shape_alpha(s, static_cast<double>(x) - cx,
                                        static_cast<double>(y) - cy) > 1e-6)
                            (*moved)[y * w + x] = 1.0f;
            }
        }
    }
    return out;
}

}  // namespace

Sample synth_scene(std::uint64_t seed, i64 h, i64 w) {
    return synth_scene_impl(seed, h, w, nullptr);
}

Sample synth_scene_debug(std::uint64_t seed, i64 h, i64 w, Tensor<float>& moved) {
    return synth_scene_impl(seed, h, w, &moved);
}

}  // namespace gshdr::data
