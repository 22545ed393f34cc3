#pragma once

// Artifact file formats: binary PPM/PGM images, OBJ meshes, CSV reports and
// the per-sample ground-truth dump.

#include <array>
#include <string>
#include <vector>

#include "pointmesh/common.hpp"
#include "pointmesh/synthgen.hpp"

namespace pointmesh {

/// image: [3,H,W] values in [0,1] -> binary P6, 8 bits per channel.
void write_ppm(const std::string& path, const Volume& image);

/// map: H x W values in [0,1] -> binary P5, scaled to 0..255.
void write_pgm(const std::string& path, const Mat& map);

void write_obj(const std::string& path, const Mat& vertices,
               const std::vector<std::array<int, 3>>& faces);
std::pair<Mat, std::vector<std::array<int, 3>>> read_obj(const std::string& path);

std::string format_double(double v);  // shortest round-trippable decimal

/// One directory per sample: image.ppm, gt.txt (documented layout), seed.txt.
void write_sample_dump(const std::string& dir, const SyntheticSample& sample);

void ensure_dir(const std::string& path);

}  // namespace pointmesh
