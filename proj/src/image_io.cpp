#include "fbwc/image_io.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace fbwc {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("file not found: " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

unsigned char quantize(scalar v) {
    const double x = static_cast<double>(v);
    const double c = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
    return static_cast<unsigned char>(c * 255.0 + 0.5);
}

// ---- PNM (P5/P6) ----

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
std::string pnm_token(const std::vector<unsigned char>& b, std::size_t& pos) {
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < b.size() && !std::isspace(b[pos])) tok += static_cast<char>(b[pos++]);
    if (tok.empty()) throw std::runtime_error("corrupt PNM header");
    return tok;
}

Tensor load_pnm(const std::vector<unsigned char>& b, const std::string& path) {
    std::size_t pos = 0;
    const std::string magic = pnm_token(b, pos);
    const int channels = magic == "P5" ? 1 : 3;
    const int w = std::stoi(pnm_token(b, pos));
    const int h = std::stoi(pnm_token(b, pos));
    const int maxval = std::stoi(pnm_token(b, pos));
    if (w <= 0 || h <= 0) throw std::runtime_error("corrupt PNM dimensions in " + path);
    if (maxval != 255)
        throw std::runtime_error("unsupported bit depth (maxval " + std::to_string(maxval) +
                                 ", want 255) in " + path);
    ++pos;  // single whitespace byte after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (b.size() - pos < need) throw std::runtime_error("truncated PNM payload in " + path);
    Tensor t({1, channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const unsigned char v = b[pos + (static_cast<std::size_t>(y) * w + x) * channels + c];
                t.mut()[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<scalar>(v) / scalar(255);
            }
    return t;
}

std::vector<unsigned char> interleave(const Tensor& t) {
    const int c = static_cast<int>(t.shape.c), h = static_cast<int>(t.shape.h),
              w = static_cast<int>(t.shape.w);
    std::vector<unsigned char> out(static_cast<std::size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                out[(static_cast<std::size_t>(y) * w + x) * c + ch] =
                    quantize(t.at(0, ch, y, x));
    return out;
}

void check_writable(const Tensor& t, int channels, const char* what) {
    if (t.shape.n != 1 || t.shape.c != channels)
        throw std::runtime_error(std::string(what) + ": expected (1," +
                                 std::to_string(channels) + ",h,w), got " + t.shape.str());
}

// ---- PNG ----

void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

std::uint32_t get_u32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void png_chunk(std::vector<unsigned char>& out, const char* type,
               const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + crc_start,
                            static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

const unsigned char kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void write_png_bytes(const std::string& path, const Tensor& t) {
    const int c = static_cast<int>(t.shape.c), h = static_cast<int>(t.shape.h),
              w = static_cast<int>(t.shape.w);
    const std::vector<unsigned char> pixels = interleave(t);
    // Filter byte 0 (None) in front of every scanline.
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(h) * (1 + static_cast<std::size_t>(w) * c));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);
        const std::size_t row = static_cast<std::size_t>(y) * w * c;
        raw.insert(raw.end(), pixels.begin() + row, pixels.begin() + row + static_cast<std::size_t>(w) * c);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> deflated(bound);
    if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("PNG compression failed for " + path);
    deflated.resize(bound);

    std::vector<unsigned char> out(kPngSig, kPngSig + 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(c == 1 ? 0 : 2);                       // gray / truecolor
    ihdr.push_back(0);                                    // compression
    ihdr.push_back(0);                                    // filter method
    ihdr.push_back(0);                                    // no interlace
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", deflated);
    png_chunk(out, "IEND", {});
    write_file(path, out);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

Tensor load_png(const std::vector<unsigned char>& b, const std::string& path) {
    if (b.size() < 8 || std::memcmp(b.data(), kPngSig, 8) != 0)
        throw std::runtime_error("corrupt PNG signature in " + path);
    std::size_t pos = 8;
    int w = 0, h = 0, depth = 0, color = 0, interlace = 0;
    std::vector<unsigned char> idat;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= b.size() && !saw_iend) {
        const std::uint32_t len = get_u32(&b[pos]);
        if (pos + 12 + len > b.size()) throw std::runtime_error("truncated PNG chunk in " + path);
        const char* type = reinterpret_cast<const char*>(&b[pos + 4]);
        const unsigned char* payload = &b[pos + 8];
        const uLong crc_want = get_u32(&b[pos + 8 + len]);
        const uLong crc_have =
            crc32(crc32(0L, Z_NULL, 0), &b[pos + 4], static_cast<uInt>(4 + len));
        if (crc_want != crc_have) throw std::runtime_error("PNG chunk CRC mismatch in " + path);
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("corrupt PNG IHDR in " + path);
            w = static_cast<int>(get_u32(payload));
            h = static_cast<int>(get_u32(payload + 4));
            depth = payload[8];
            color = payload[9];
            interlace = payload[12];
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || w <= 0 || h <= 0) throw std::runtime_error("corrupt PNG (no header) in " + path);
    if (depth != 8)
        throw std::runtime_error("unsupported bit depth (" + std::to_string(depth) +
                                 ", want 8) in " + path);
    if (color != 0 && color != 2)
        throw std::runtime_error("unsupported PNG color type " + std::to_string(color) + " in " + path);
    if (interlace != 0) throw std::runtime_error("unsupported interlaced PNG: " + path);
    const int channels = color == 0 ? 1 : 3;

    const std::size_t stride = static_cast<std::size_t>(w) * channels;
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw std::runtime_error("PNG inflate failed for " + path);

    // Undo per-scanline filters in place into `img`.
    std::vector<unsigned char> img(static_cast<std::size_t>(h) * stride);
    const int bpp = channels;
    for (int y = 0; y < h; ++y) {
        const unsigned char filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const unsigned char* src = &raw[static_cast<std::size_t>(y) * (stride + 1) + 1];
        unsigned char* dst = &img[static_cast<std::size_t>(y) * stride];
        const unsigned char* up = y > 0 ? &img[static_cast<std::size_t>(y - 1) * stride] : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<std::size_t>(bpp) ? dst[x - bpp] : 0;
            const int bch = up ? up[x] : 0;
            const int cc = (up && x >= static_cast<std::size_t>(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += bch; break;
                case 3: v += (a + bch) / 2; break;
                case 4: v += paeth(a, bch, cc); break;
                default: throw std::runtime_error("corrupt PNG filter byte in " + path);
            }
            dst[x] = static_cast<unsigned char>(v & 0xff);
        }
    }

    Tensor t({1, channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                t.mut()[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<scalar>(img[(static_cast<std::size_t>(y) * w + x) * channels + c]) /
                    scalar(255);
    return t;
}

bool has_suffix(const std::string& s, const char* suf) {
    const std::size_t n = std::strlen(suf);
    return s.size() >= n && s.compare(s.size() - n, n, suf) == 0;
}

}  // namespace

Tensor load_image(const std::string& path) {
    const std::vector<unsigned char> b = read_file(path);
    if (b.size() >= 2 && b[0] == 'P' && (b[1] == '5' || b[1] == '6')) return load_pnm(b, path);
    if (b.size() >= 8 && std::memcmp(b.data(), kPngSig, 8) == 0) return load_png(b, path);
    throw std::runtime_error("unsupported image format: " + path);
}

void save_pgm(const std::string& path, const Tensor& t) {
    check_writable(t, 1, "save_pgm");
    const std::string header = "P5\n" + std::to_string(t.shape.w) + " " +
                               std::to_string(t.shape.h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    const std::vector<unsigned char> px = interleave(t);
    out.insert(out.end(), px.begin(), px.end());
    write_file(path, out);
}

void save_ppm(const std::string& path, const Tensor& t) {
    check_writable(t, 3, "save_ppm");
    const std::string header = "P6\n" + std::to_string(t.shape.w) + " " +
                               std::to_string(t.shape.h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    const std::vector<unsigned char> px = interleave(t);
    out.insert(out.end(), px.begin(), px.end());
    write_file(path, out);
}

void save_png(const std::string& path, const Tensor& t) {
    if (t.shape.n != 1 || (t.shape.c != 1 && t.shape.c != 3))
        throw std::runtime_error("save_png: expected (1,1,h,w) or (1,3,h,w), got " + t.shape.str());
    write_png_bytes(path, t);
}

void save_image(const std::string& path, const Tensor& t) {
    if (has_suffix(path, ".pgm")) {
        save_pgm(path, t);
    } else if (has_suffix(path, ".ppm")) {
        save_ppm(path, t);
    } else if (has_suffix(path, ".png")) {
        save_png(path, t);
    } else {
        throw std::runtime_error("save_image: unknown extension on " + path);
    }
}

void save_mask(const std::string& path, const Tensor& probs) {
    check_writable(probs, 1, "save_mask");
    if (has_suffix(path, ".png")) {
        save_png(path, probs);
    } else {
        save_pgm(path, probs);
    }
}

}  // namespace fbwc
