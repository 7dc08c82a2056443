#include "gshdr/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace gshdr::io {

namespace {

[[noreturn]] void malformed(const std::string& path, const std::string& what) {
    fail(ErrorKind::Format, path + ": malformed header (" + what + ")");
}

[[noreturn]] void truncated(const std::string& path) {
    fail(ErrorKind::Format, path + ": truncated payload");
}

[[noreturn]] void unsupported(const std::string& path, const std::string& what) {
    fail(ErrorKind::Format, path + ": unsupported variant (" + what + ")");
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for reading");
    return f;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    return f;
}

// Reads one whitespace-delimited PNM token, skipping '#' comments, and
// consumes the single whitespace byte that terminates it. After the last
// header field the stream therefore sits exactly on the payload.
std::string pnm_token(std::istream& f, const std::string& path) {
    int c = f.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = f.get();
        c = f.get();
    }
    if (c == EOF) malformed(path, "unexpected end of header");
    std::string tok;
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = f.get();
    }
    return tok;
}

i64 pnm_int(std::istream& f, const std::string& path, const char* field) {
    const std::string tok = pnm_token(f, path);
    i64 v = 0;
    for (char ch : tok) {
        if (ch < '0' || ch > '9') malformed(path, std::string("non-numeric ") + field);
        v = v * 10 + (ch - '0');
        if (v > (i64(1) << 30)) malformed(path, std::string(field) + " out of range");
    }
    if (tok.empty()) malformed(path, std::string("missing ") + field);
    return v;
}

void check_dims(i64 w, i64 h, const std::string& path) {
    if (w < 1 || h < 1 || w > 1 << 20 || h > 1 << 20) malformed(path, "bad dimensions");
}

}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream f = open_in(path);
    const std::string magic = pnm_token(f, path);
    if (magic != "P6") {
        if (magic.size() == 2 && magic[0] == 'P') unsupported(path, "PNM type " + magic);
        malformed(path, "not a P6 file");
    }
    const i64 w = pnm_int(f, path, "width");
    const i64 h = pnm_int(f, path, "height");
    const i64 maxval = pnm_int(f, path, "maxval");
    if (maxval != 255 && maxval != 65535) unsupported(path, "maxval " + std::to_string(maxval));
    check_dims(w, h, path);
    // pnm_token already consumed the single whitespace byte after maxval;
    // the payload starts here.

    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> row(static_cast<std::size_t>(w * 3 * bytes));
    Image img(Shape{3, h, w});
    // Divide rather than multiply by a reciprocal: v/maxval is then the
    // correctly rounded float, so write -> read round trips bit for bit.
    const float scale = static_cast<float>(maxval);
    for (i64 y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (f.gcount() != static_cast<std::streamsize>(row.size())) truncated(path);
        for (i64 x = 0; x < w; ++x)
            for (i64 c = 0; c < 3; ++c) {
                const std::size_t o = static_cast<std::size_t>((x * 3 + c) * bytes);
                const i64 v = bytes == 1 ? row[o] : (i64(row[o]) << 8) | row[o + 1];
                img[(c * h + y) * w + x] = static_cast<float>(v) / scale;
            }
    }
    return img;
}

void write_ppm(const std::string& path, const Image& img, int maxval) {
    if (!img.defined() || img.rank() != 3 || img.dim(0) != 3)
        fail(ErrorKind::Shape, "write_ppm: expected (3,H,W), got " + img.shape().str());
    if (maxval != 255 && maxval != 65535)
        fail(ErrorKind::Config, "write_ppm: maxval must be 255 or 65535");
    const i64 h = img.dim(1), w = img.dim(2);
    std::ofstream f = open_out(path);
    f << "P6\n" << w << " " << h << "\n" << maxval << "\n";
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> row(static_cast<std::size_t>(w * 3 * bytes));
    for (i64 y = 0; y < h; ++y) {
        for (i64 x = 0; x < w; ++x)
            for (i64 c = 0; c < 3; ++c) {
                const float v = std::clamp(img[(c * h + y) * w + x], 0.0f, 1.0f);
                const i64 q = static_cast<i64>(std::lround(v * static_cast<float>(maxval)));
                const std::size_t o = static_cast<std::size_t>((x * 3 + c) * bytes);
                if (bytes == 1) {
                    row[o] = static_cast<unsigned char>(q);
                } else {
                    row[o] = static_cast<unsigned char>(q >> 8);
                    row[o + 1] = static_cast<unsigned char>(q & 0xff);
                }
            }
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
    if (!f) fail(ErrorKind::Io, "write failed for " + path);
}

Image read_pfm(const std::string& path) {
    std::ifstream f = open_in(path);
    const std::string magic = pnm_token(f, path);
    if (magic == "Pf") unsupported(path, "grayscale PFM");
    if (magic != "PF") malformed(path, "not a PFM file");
    const i64 w = pnm_int(f, path, "width");
    const i64 h = pnm_int(f, path, "height");
    const std::string stok = pnm_token(f, path);
    double scale = 0;
    try {
        scale = std::stod(stok);
    } catch (...) {
        malformed(path, "bad scale");
    }
    if (scale >= 0) unsupported(path, "big-endian PFM");
    check_dims(w, h, path);

    const float mult = static_cast<float>(-scale);
    std::vector<unsigned char> row(static_cast<std::size_t>(w * 3 * 4));
    Image img(Shape{3, h, w});
    for (i64 yy = 0; yy < h; ++yy) {
        const i64 y = h - 1 - yy;  // PFM rows run bottom to top
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (f.gcount() != static_cast<std::streamsize>(row.size())) truncated(path);
        for (i64 x = 0; x < w; ++x)
            for (i64 c = 0; c < 3; ++c) {
                const std::size_t o = static_cast<std::size_t>((x * 3 + c) * 4);
                std::uint32_t u = std::uint32_t(row[o]) | (std::uint32_t(row[o + 1]) << 8) |
                                  (std::uint32_t(row[o + 2]) << 16) |
                                  (std::uint32_t(row[o + 3]) << 24);
                float v;
                std::memcpy(&v, &u, 4);
                img[(c * h + y) * w + x] = v * mult;
            }
    }
    return img;
}

void write_pfm(const std::string& path, const Image& img) {
    if (!img.defined() || img.rank() != 3 || img.dim(0) != 3)
        fail(ErrorKind::Shape, "write_pfm: expected (3,H,W), got " + img.shape().str());
    const i64 h = img.dim(1), w = img.dim(2);
    std::ofstream f = open_out(path);
    f << "PF\n" << w << " " << h << "\n-1.0\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w * 3 * 4));
    for (i64 yy = 0; yy < h; ++yy) {
        const i64 y = h - 1 - yy;
        for (i64 x = 0; x < w; ++x)
            for (i64 c = 0; c < 3; ++c) {
                const float v = img[(c * h + y) * w + x];
                std::uint32_t u;
                std::memcpy(&u, &v, 4);
                const std::size_t o = static_cast<std::size_t>((x * 3 + c) * 4);
                row[o] = static_cast<unsigned char>(u & 0xff);
                row[o + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
                row[o + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
                row[o + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
            }
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
    if (!f) fail(ErrorKind::Io, "write failed for " + path);
}

namespace {

// (r,g,b,e) -> float triple; e == 0 means true zero, otherwise the decoded
// value is the interval midpoint (c + 0.5) * 2^(e - 136).
void rgbe_decode(const unsigned char q[4], float out[3]) {
    if (q[3] == 0) {
        out[0] = out[1] = out[2] = 0.0f;
        return;
    }
    const float s = std::ldexp(1.0f, int(q[3]) - 136);
    for (int c = 0; c < 3; ++c) out[c] = (static_cast<float>(q[c]) + 0.5f) * s;
}

}  // namespace

Image read_rgbe(const std::string& path) {
    std::ifstream f = open_in(path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("#?", 0) != 0)
        malformed(path, "missing #? signature");
    bool format_seen = false;
    while (std::getline(f, line)) {
        if (line.empty()) break;
        if (line[0] == '#') continue;
        if (line.rfind("FORMAT=", 0) == 0) {
            if (line != "FORMAT=32-bit_rle_rgbe") unsupported(path, line);
            format_seen = true;
        }
        // EXPOSURE/GAMMA and other variables are ignored
    }
    if (!format_seen) malformed(path, "missing FORMAT line");
    if (!std::getline(f, line)) malformed(path, "missing resolution line");
    i64 w = 0, h = 0;
    {
        std::istringstream ss(line);
        std::string ys, xs;
        i64 hv = 0, wv = 0;
        if (!(ss >> ys >> hv >> xs >> wv)) malformed(path, "bad resolution line");
        if (ys != "-Y" || xs != "+X") unsupported(path, "orientation " + line);
        h = hv;
        w = wv;
    }
    check_dims(w, h, path);

    Image img(Shape{3, h, w});
    std::vector<unsigned char> scan(static_cast<std::size_t>(w * 4));
    for (i64 y = 0; y < h; ++y) {
        unsigned char head[4];
        f.read(reinterpret_cast<char*>(head), 4);
        if (f.gcount() != 4) truncated(path);
        const bool rle = head[0] == 2 && head[1] == 2 && ((i64(head[2]) << 8) | head[3]) == w &&
                         w >= 8 && w < 32768;
        if (rle) {
            // new-style: four planes, each run-length coded
            for (int c = 0; c < 4; ++c) {
                i64 x = 0;
                while (x < w) {
                    int n = f.get();
                    if (n == EOF) truncated(path);
                    if (n > 128) {
                        const int v = f.get();
                        if (v == EOF) truncated(path);
                        const i64 run = n - 128;
                        if (x + run > w) malformed(path, "run overflows scanline");
                        for (i64 i = 0; i < run; ++i)
                            scan[static_cast<std::size_t>((x + i) * 4 + c)] =
                                static_cast<unsigned char>(v);
                        x += run;
                    } else {
                        if (n == 0) malformed(path, "zero-length literal run");
                        if (x + n > w) malformed(path, "run overflows scanline");
                        for (int i = 0; i < n; ++i) {
                            const int v = f.get();
                            if (v == EOF) truncated(path);
                            scan[static_cast<std::size_t>((x + i) * 4 + c)] =
                                static_cast<unsigned char>(v);
                        }
                        x += n;
                    }
                }
            }
        } else {
            if (head[0] == 1 && head[1] == 1 && head[2] == 1)
                unsupported(path, "old-style RLE scanlines");
            // flat quadruples; the four bytes already read are pixel 0
            std::memcpy(scan.data(), head, 4);
            const std::streamsize rest = static_cast<std::streamsize>((w - 1) * 4);
            f.read(reinterpret_cast<char*>(scan.data() + 4), rest);
            if (f.gcount() != rest) truncated(path);
        }
        for (i64 x = 0; x < w; ++x) {
            float px[3];
            rgbe_decode(&scan[static_cast<std::size_t>(x * 4)], px);
            for (i64 c = 0; c < 3; ++c) img[(c * h + y) * w + x] = px[c];
        }
    }
    return img;
}

Image read_image(const std::string& path) {
    std::ifstream f = open_in(path);
    char magic[2] = {0, 0};
    f.read(magic, 2);
    f.close();
    if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
    if (magic[0] == 'P' && (magic[1] == 'F' || magic[1] == 'f')) return read_pfm(path);
    if (magic[0] == '#' && magic[1] == '?') return read_rgbe(path);
    fail(ErrorKind::Format, path + ": unrecognized image magic");
}

}  // namespace gshdr::io
