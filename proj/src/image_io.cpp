#include "cxrage/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cxrage/fsutil.hpp"

namespace cxrage {

namespace {

struct FileCloser {
    std::FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::runtime_error("image '" + path + "': " + what);
}

Tensor<double> gray_from_bytes(const std::vector<std::uint8_t>& bytes, std::size_t w,
                               std::size_t h, std::size_t channels) {
    Tensor<double> out({1, h, w});
    for (std::size_t i = 0; i < w * h; ++i) {
        double v = 0;
        for (std::size_t c = 0; c < channels; ++c) v += bytes[i * channels + c];
        out.data[i] = v / static_cast<double>(channels) / 255.0;
    }
    return out;
}

Tensor<double> read_png(const std::string& path, std::FILE* f) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(path, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(path, "libpng init failed");
    }
    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "not a decodable PNG");
    }
    png_init_io(png, f);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    const std::size_t channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "unsupported PNG channel layout");
    }
    bytes.resize(w * h * channels);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return gray_from_bytes(bytes, w, h, channels);
}

// Pulls the next whitespace-delimited token, skipping '#' comment lines.
bool next_pgm_token(std::istream& in, std::string& tok) {
    tok.clear();
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return true;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return !tok.empty();
}

Tensor<double> read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    std::string tok;
    if (!next_pgm_token(in, tok) || (tok != "P2" && tok != "P5")) fail(path, "not a PGM file");
    const bool raw = tok == "P5";
    std::size_t dims[3];
    for (std::size_t& d : dims) {
        if (!next_pgm_token(in, tok)) fail(path, "truncated PGM header");
        try {
            d = std::stoul(tok);
        } catch (const std::exception&) {
            fail(path, "bad PGM header token '" + tok + "'");
        }
    }
    const std::size_t w = dims[0], h = dims[1], maxval = dims[2];
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) fail(path, "bad PGM dimensions");

    Tensor<double> out({1, h, w});
    if (raw) {
        // header ends with exactly one whitespace byte, already consumed by
        // the tokenizer
        const std::size_t bpp = maxval > 255 ? 2 : 1;
        std::vector<std::uint8_t> buf(w * h * bpp);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in.gcount()) != buf.size()) fail(path, "truncated PGM data");
        for (std::size_t i = 0; i < w * h; ++i) {
            const std::size_t v =
                bpp == 1 ? buf[i]
                         : (static_cast<std::size_t>(buf[2 * i]) << 8) + buf[2 * i + 1];
            out.data[i] = static_cast<double>(v) / static_cast<double>(maxval);
        }
    } else {
        for (std::size_t i = 0; i < w * h; ++i) {
            if (!next_pgm_token(in, tok)) fail(path, "truncated PGM data");
            std::size_t v = 0;
            try {
                v = std::stoul(tok);
            } catch (const std::exception&) {
                fail(path, "bad PGM pixel '" + tok + "'");
            }
            if (v > maxval) fail(path, "PGM pixel exceeds maxval");
            out.data[i] = static_cast<double>(v) / static_cast<double>(maxval);
        }
    }
    return out;
}

}  // namespace

Tensor<double> read_gray_image(const std::string& path) {
    FileCloser fc;
    fc.f = std::fopen(path.c_str(), "rb");
    if (!fc.f) fail(path, "cannot open");
    unsigned char sig[8] = {0};
    const std::size_t got = std::fread(sig, 1, 8, fc.f);
    if (got >= 2 && sig[0] == 'P' && (sig[1] == '2' || sig[1] == '5')) {
        return read_pgm(path);
    }
    if (got == 8 && png_sig_cmp(sig, 0, 8) == 0) {
        std::rewind(fc.f);
        return read_png(path, fc.f);
    }
    fail(path, "unsupported format (need 8-bit PNG or PGM)");
}

void write_pgm(const std::string& path, const Tensor<double>& image) {
    if (image.rank() != 3 || image.shape[0] != 1) {
        throw std::invalid_argument("write_pgm: need a 1xHxW tensor, got " +
                                    shape_str(image.shape));
    }
    const std::size_t h = image.shape[1], w = image.shape[2];
    std::ostringstream out;
    out << "P2\n" << w << ' ' << h << "\n255\n";
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double v = image.data[y * w + x];
            v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            out << static_cast<int>(std::lround(v * 255.0));
            out << (x + 1 == w ? '\n' : ' ');
        }
    }
    atomic_write_file(path, out.str());
}

void write_rgb_png(const std::string& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != width * height * 3) {
        throw std::invalid_argument("write_rgb_png: buffer size does not match dimensions");
    }
    const std::string tmp = path + ".tmp";
    FileCloser fc;
    fc.f = std::fopen(tmp.c_str(), "wb");
    if (!fc.f) fail(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(path, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(path, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(path, "PNG write failed");
    }
    png_init_io(png, fc.f);
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (std::size_t y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(rgb.data() + y * width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    std::fclose(fc.f);
    fc.f = nullptr;
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        fail(path, "cannot move temporary file into place");
    }
}

}  // namespace cxrage
