#pragma once
// Per-test scratch directory under the system temp dir, removed on exit.

#include <filesystem>
#include <random>
#include <string>

#include "fairpairs/text.hpp"

struct Scratch {
    std::filesystem::path dir;

    Scratch() {
        std::random_device rd;
        dir = std::filesystem::temp_directory_path() / ("fairpairs-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(dir);
    }
    ~Scratch() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
    std::filesystem::path write(const std::string &name, const std::string &contents) const {
        fairpairs::text::write_file(dir / name, contents);
        return dir / name;
    }
};
