// Container format: bit-exact round trips plus named failures for bad magic,
// bad version, truncation, trailing bytes, and shape mismatches.

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "holitok/checkpoint.hpp"

using namespace holitok;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("save then load reproduces every tensor bit-exactly") {
    Rng rng(31);
    std::map<std::string, Tensor<float>> params;
    params.emplace("enc.w", randn<float>({3, 2, 4}, rng));
    params.emplace("enc.b", randn<float>({3}, rng));
    params.emplace("dec.w", randn<float>({2, 5}, rng));
    std::string path = tmp_path("holitok_ckpt_roundtrip.htok");
    save_params(path, params);

    std::map<std::string, Tensor<float>> loaded;
    loaded.emplace("enc.w", zeros<float>({3, 2, 4}));
    loaded.emplace("enc.b", zeros<float>({3}));
    loaded.emplace("dec.w", zeros<float>({2, 5}));
    load_params(path, loaded);
    for (auto& [name, t] : params) {
        auto& u = loaded.at(name);
        REQUIRE(u.numel() == t.numel());
        CHECK(std::memcmp(u.data(), t.data(), t.numel() * sizeof(float)) == 0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("double-precision tensors round trip bit-exactly too") {
    Rng rng(32);
    std::map<std::string, Tensor<double>> params;
    params.emplace("x", randn<double>({7}, rng));
    std::string path = tmp_path("holitok_ckpt_f64.htok");
    save_params(path, params);
    std::map<std::string, Tensor<double>> loaded;
    loaded.emplace("x", zeros<double>({7}));
    load_params(path, loaded);
    CHECK(std::memcmp(loaded.at("x").data(), params.at("x").data(), 7 * sizeof(double)) == 0);
    std::filesystem::remove(path);
}

TEST_CASE("corruption produces named errors") {
    Rng rng(33);
    std::map<std::string, Tensor<float>> params;
    params.emplace("w", randn<float>({4, 4}, rng));
    std::string path = tmp_path("holitok_ckpt_corrupt.htok");
    save_params(path, params);
    std::vector<char> good = slurp(path);

    SUBCASE("bad magic") {
        auto bad = good;
        bad[0] = 'X';
        spit(path, bad);
        CHECK_THROWS_WITH_AS(load_blobs(path), doctest::Contains("magic"), std::runtime_error);
    }
    SUBCASE("unsupported version") {
        auto bad = good;
        bad[4] = 99;
        spit(path, bad);
        CHECK_THROWS_WITH_AS(load_blobs(path), doctest::Contains("version"), std::runtime_error);
    }
    SUBCASE("truncation names expected vs available byte counts") {
        auto bad = good;
        bad.resize(bad.size() - 10);
        spit(path, bad);
        try {
            load_blobs(path);
            FAIL("expected truncation error");
        } catch (const std::runtime_error& e) {
            std::string msg = e.what();
            CHECK(msg.find("truncated") != std::string::npos);
            CHECK(msg.find(std::to_string(good.size() - 10)) != std::string::npos);  // available
        }
    }
    SUBCASE("trailing garbage is rejected") {
        auto bad = good;
        bad.push_back(0);
        spit(path, bad);
        CHECK_THROWS_WITH_AS(load_blobs(path), doctest::Contains("trailing"), std::runtime_error);
    }
    SUBCASE("shape mismatch names the offending tensor") {
        std::map<std::string, Tensor<float>> other;
        other.emplace("w", zeros<float>({2, 8}));
        CHECK_THROWS_WITH_AS(load_params(path, other), doctest::Contains("'w'"), std::runtime_error);
    }
    SUBCASE("missing tensor is reported by name") {
        std::map<std::string, Tensor<float>> other;
        other.emplace("w", zeros<float>({4, 4}));
        other.emplace("extra", zeros<float>({1}));
        CHECK_THROWS_WITH_AS(load_params(path, other), doctest::Contains("'extra'"), std::runtime_error);
    }
    std::filesystem::remove(path);
}
