#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cumamba/image_io.hpp"
#include "doctest.h"

using namespace cumamba;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "cumamba_image_io_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("quantization anchors") {
    CHECK(quantize(1.0f) == 255);
    CHECK(quantize(0.0f) == 0);
    CHECK(quantize(0.5f) == 128);
    CHECK(quantize(2.0f) == 255);
    CHECK(quantize(-1.0f) == 0);
}

TEST_CASE("ppm and png round trips stay within half a quantization step") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img({13, 17, 3});
    for (float& v : img.mutable_data()) v = u(rng);
    img.mutable_data()[0] = 1.0f;
    img.mutable_data()[1] = 0.5f;
    for (const char* name : {"rt.ppm", "rt.png", "RT.PNG"}) {
        const auto path = scratch(name).string();
        save_image(path, img);
        const Image back = load_image(path);
        REQUIRE(back.shape() == img.shape());
        CHECK(back[0] == 1.0f);
        CHECK(back[1] == doctest::Approx(128.0 / 255.0));
        for (std::size_t i = 0; i < img.numel(); ++i) CHECK(std::abs(back[i] - img[i]) <= 1.0f / 510.0f + 1e-7f);
        const Image again = load_image(path);
        save_image(path, again);
        const Image stable = load_image(path);
        for (std::size_t i = 0; i < img.numel(); ++i) CHECK(stable[i] == again[i]);
    }
}

TEST_CASE("every 8-bit level survives decode and encode exactly") {
    Image img({1, 86, 3});
    for (std::size_t i = 0; i < 256; ++i) img.mutable_data()[i] = static_cast<float>(i) / 255.0f;
    const auto path = scratch("levels.ppm").string();
    save_image(path, img);
    const Image back = load_image(path);
    for (std::size_t i = 0; i < 256; ++i) CHECK(back[i] == img[i]);
}

TEST_CASE("ppm header comments are skipped") {
    const auto path = scratch("comment.ppm").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "P6\n# made by hand\n2 1\n# another\n255\n";
        const unsigned char px[6] = {0, 255, 51, 102, 153, 204};
        out.write(reinterpret_cast<const char*>(px), 6);
    }
    const Image img = load_image(path);
    REQUIRE(img.shape() == Shape{1, 2, 3});
    CHECK(img[1] == 1.0f);
    CHECK(img[2] == doctest::Approx(0.2));
}

TEST_CASE("bad inputs raise image errors") {
    CHECK_THROWS_AS(load_image(scratch("x.bmp").string()), ImageIoError);
    CHECK_THROWS_AS(load_image(scratch("missing.ppm").string()), ImageIoError);
    CHECK_THROWS_AS(load_image(scratch("missing.png").string()), ImageIoError);
    const auto trunc = scratch("trunc.ppm").string();
    {
        std::ofstream out(trunc, std::ios::binary);
        out << "P6\n4 4\n255\nabc";
    }
    CHECK_THROWS_AS(load_image(trunc), ImageIoError);
    const auto ascii = scratch("ascii.ppm").string();
    {
        std::ofstream out(ascii);
        out << "P3\n1 1\n255\n0 0 0\n";
    }
    CHECK_THROWS_AS(load_image(ascii), ImageIoError);
    const auto deep = scratch("deep.ppm").string();
    {
        std::ofstream out(deep);
        out << "P6\n1 1\n65535\n";
    }
    CHECK_THROWS_AS(load_image(deep), ImageIoError);
    const auto fake = scratch("fake.png").string();
    {
        std::ofstream out(fake);
        out << "not a png";
    }
    CHECK_THROWS_AS(load_image(fake), ImageIoError);
    CHECK_THROWS_AS(save_image(scratch("gray.ppm").string(), Image({2, 2, 1})), ImageIoError);
}
