// Bundled stand-in detector for closed-loop runs: scans a directory of
// volumes, finds bright blobs, and writes the standard detections CSV. It
// slots into the `run` subcommand's {input_dir}/{output} model contract.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "ctqa/detections.hpp"
#include "ctqa/nifti.hpp"
#include "ctqa/phantom.hpp"
#include "ctqa/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"synthetic blob detector (closed-loop test oracle)"};

    std::string input_dir, output, condition;
    double min_contrast = ctqa::kDefaultDetectMinContrastHu;
    double fwhm = ctqa::kDefaultDetectFwhmMm;
    app.add_option("--input-dir", input_dir, "directory of NIfTI volumes")->required();
    app.add_option("--output", output, "detections CSV to write")->required();
    app.add_option("--condition", condition,
                   "condition id for emitted rows (default: input dir name)");
    app.add_option("--min-contrast", min_contrast, "peak threshold over background, HU");
    app.add_option("--fwhm", fwhm, "smoothing FWHM, mm");

    CLI11_PARSE(app, argc, argv);

    try {
        if (condition.empty()) condition = fs::path(input_dir).filename().string();

        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(input_dir)) {
            const std::string name = e.path().filename().string();
            if (name.ends_with(".nii") || name.ends_with(".nii.gz")) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());

        std::vector<ctqa::Detection> all;
        for (const auto& f : files) {
            const auto volume = ctqa::read_volume(f);
            const auto found = ctqa::synthetic_detect(volume, ctqa::case_id_from_path(f), condition,
                                                      min_contrast, fwhm);
            all.insert(all.end(), found.begin(), found.end());
        }

        std::ofstream out(output, std::ios::trunc);
        if (!out) {
            std::cerr << "cannot write " << output << '\n';
            return 2;
        }
        ctqa::write_detections_csv(all, out);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
