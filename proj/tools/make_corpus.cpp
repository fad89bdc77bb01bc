// Writes the synthetic colour-cast + blur corpus: <dir>/NN_degraded.ppm,
// <dir>/NN_clean.ppm and <dir>/manifest.csv.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "wfdiff/imageio.hpp"
#include "wfdiff/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate the synthetic degraded/clean corpus"};
    std::string dir = "data/synthetic";
    std::size_t count = 24, size = 64;
    std::uint64_t seed = 2024;
    app.add_option("--dir", dir, "Output directory");
    app.add_option("--count", count, "Number of pairs")->check(CLI::PositiveNumber);
    app.add_option("--size", size, "Image extent")->check(CLI::Range(11, 4096));
    app.add_option("--seed", seed, "Generator seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        std::filesystem::create_directories(dir);
        std::ofstream manifest(std::filesystem::path(dir) / "manifest.csv", std::ios::binary);
        manifest << "degraded_path,reference_path\n";
        for (std::size_t i = 0; i < count; ++i) {
            wfdiff::Rng rng = wfdiff::Rng(seed).fork(i);
            const auto pair = wfdiff::synthetic_pair<float>(3, size, size, rng);
            char stem[32];
            std::snprintf(stem, sizeof stem, "%02zu", i);
            const std::string deg = std::string(stem) + "_degraded.ppm", clean = std::string(stem) + "_clean.ppm";
            wfdiff::write_ppm(pair.degraded, (std::filesystem::path(dir) / deg).string());
            wfdiff::write_ppm(pair.clean, (std::filesystem::path(dir) / clean).string());
            manifest << deg << "," << clean << "\n";
        }
        if (!manifest) throw std::runtime_error("cannot write manifest");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
