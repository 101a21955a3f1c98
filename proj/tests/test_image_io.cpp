#include "cxrage/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "cxrage/dataset.hpp"
#include "doctest.h"

using cxrage::bilinear_resize;
using cxrage::read_gray_image;
using cxrage::Shape;
using cxrage::Tensor;
using cxrage::write_pgm;
using cxrage::write_rgb_png;

namespace {

std::string temp_path(const std::string& name) { return "io_test_" + name; }

}  // namespace

TEST_CASE("pgm round trip preserves values to 8-bit precision") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    Tensor<double> img({1, 5, 7});
    for (auto& v : img.data) v = d(rng);
    const std::string path = temp_path("roundtrip.pgm");
    write_pgm(path, img);
    const Tensor<double> back = read_gray_image(path);
    REQUIRE(back.shape == img.shape);
    for (std::size_t i = 0; i < img.numel(); ++i)
        CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
    std::remove(path.c_str());
}

TEST_CASE("black and white images map to 0 and 1") {
    const std::string black = temp_path("black.pgm");
    const std::string white = temp_path("white.pgm");
    write_pgm(black, Tensor<double>({1, 3, 3}));
    write_pgm(white, Tensor<double>::full({1, 3, 3}, 1.0));
    for (double v : read_gray_image(black).data) CHECK(v == 0.0);
    for (double v : read_gray_image(white).data) CHECK(v == 1.0);
    std::remove(black.c_str());
    std::remove(white.c_str());
}

TEST_CASE("raw P5 data is accepted") {
    const std::string path = temp_path("raw.pgm");
    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n# comment line\n2 2\n255\n";
        const unsigned char px[4] = {0, 85, 170, 255};
        f.write(reinterpret_cast<const char*>(px), 4);
    }
    const Tensor<double> img = read_gray_image(path);
    CHECK(img.shape == Shape{1, 2, 2});
    CHECK(img.data[0] == 0.0);
    CHECK(img.data[1] == doctest::Approx(85.0 / 255.0));
    CHECK(img.data[3] == 1.0);
    std::remove(path.c_str());
}

TEST_CASE("png round trip via gray rgb") {
    const std::size_t w = 6, h = 4;
    std::vector<std::uint8_t> rgb(w * h * 3);
    for (std::size_t i = 0; i < w * h; ++i) {
        const auto v = static_cast<std::uint8_t>((i * 13) % 256);
        rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = v;
    }
    const std::string path = temp_path("gray.png");
    write_rgb_png(path, w, h, rgb);
    const Tensor<double> img = read_gray_image(path);
    REQUIRE(img.shape == Shape{1, h, w});
    for (std::size_t i = 0; i < w * h; ++i)
        CHECK(img.data[i] == doctest::Approx(rgb[i * 3] / 255.0));
    std::remove(path.c_str());
}

TEST_CASE("png writes are byte-identical for identical pixels") {
    std::vector<std::uint8_t> rgb(8 * 8 * 3, 200);
    rgb[0] = 3;
    const std::string a = temp_path("det_a.png");
    const std::string b = temp_path("det_b.png");
    write_rgb_png(a, 8, 8, rgb);
    write_rgb_png(b, 8, 8, rgb);
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    const std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
    CHECK(!ca.empty());
    std::remove(a.c_str());
    std::remove(b.c_str());
}

TEST_CASE("unreadable or unsupported files name the path") {
    try {
        read_gray_image("no_such_file_anywhere.png");
        FAIL("expected error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("no_such_file_anywhere.png") != std::string::npos);
    }

    const std::string path = temp_path("garbage.bin");
    {
        std::ofstream f(path, std::ios::binary);
        f << "this is not an image at all";
    }
    try {
        read_gray_image(path);
        FAIL("expected error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("bilinear resize keeps constants and interpolates ramps") {
    Tensor<double> flat = Tensor<double>::full({1, 8, 8}, 0.37);
    const Tensor<double> down = bilinear_resize(flat, 4, 4);
    CHECK(down.shape == Shape{1, 4, 4});
    for (double v : down.data) CHECK(v == 0.37);

    Tensor<double> ramp({1, 1, 4}, {0.0, 1.0, 2.0, 3.0});
    const Tensor<double> half = bilinear_resize(ramp, 1, 2);
    CHECK(half.data[0] == doctest::Approx(0.5));
    CHECK(half.data[1] == doctest::Approx(2.5));

    const Tensor<double> same = bilinear_resize(ramp, 1, 4);
    CHECK(same.data == ramp.data);

    CHECK_THROWS_AS(bilinear_resize(Tensor<double>({2, 4, 4}), 2, 2), std::invalid_argument);
}
