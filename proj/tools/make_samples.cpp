// Writes the bundled sample geometries as JSON into a directory.

#include <filesystem>
#include <iostream>

#include <harmap/samples.hpp>

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_samples <directory>\n";
        return 1;
    }
    namespace fs = std::filesystem;
    try {
        for (const auto& [name, geo] : harmap::samples::bundled()) {
            fs::path dir = fs::path(argv[1]) / name;
            fs::create_directories(dir);
            harmap::write_atomic((dir / (name + ".json")).string(), harmap::to_json(geo).dump(2) + "\n");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
