#include "pointmesh/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace pointmesh {

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    require(!ec, "io-error", "cannot create directory " + path + ": " + ec.message());
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_ppm(const std::string& path, const Volume& image) {
    require(image.n == 3, "dim-error", "write_ppm expects a [3,H,W] image");
    std::ofstream f(path, std::ios::binary);
    require(bool(f), "io-error", "cannot write " + path);
    f << "P6\n" << image.w << " " << image.h << "\n255\n";
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                f.put(char(int(std::lround(v * 255.0))));
            }
    require(bool(f), "io-error", "short write on " + path);
}

void write_pgm(const std::string& path, const Mat& map) {
    std::ofstream f(path, std::ios::binary);
    require(bool(f), "io-error", "cannot write " + path);
    f << "P5\n" << map.cols << " " << map.rows << "\n255\n";
    for (int y = 0; y < map.rows; ++y)
        for (int x = 0; x < map.cols; ++x) {
            double v = std::clamp(map.at(y, x), 0.0, 1.0);
            f.put(char(int(std::lround(v * 255.0))));
        }
    require(bool(f), "io-error", "short write on " + path);
}

void write_obj(const std::string& path, const Mat& vertices,
               const std::vector<std::array<int, 3>>& faces) {
    require(vertices.cols == 3, "dim-error", "write_obj expects n x 3 vertices");
    std::ofstream f(path);
    require(bool(f), "io-error", "cannot write " + path);
    for (int i = 0; i < vertices.rows; ++i)
        f << "v " << format_double(vertices.at(i, 0)) << " " << format_double(vertices.at(i, 1))
          << " " << format_double(vertices.at(i, 2)) << "\n";
    for (const auto& face : faces)
        f << "f " << face[0] + 1 << " " << face[1] + 1 << " " << face[2] + 1 << "\n";
    require(bool(f), "io-error", "short write on " + path);
}

std::pair<Mat, std::vector<std::array<int, 3>>> read_obj(const std::string& path) {
    std::ifstream f(path);
    require(bool(f), "io-error", "cannot read " + path);
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 p;
            ls >> p.x >> p.y >> p.z;
            verts.push_back(p);
        } else if (tag == "f") {
            std::array<int, 3> face;
            ls >> face[0] >> face[1] >> face[2];
            faces.push_back({face[0] - 1, face[1] - 1, face[2] - 1});
        }
    }
    Mat m(int(verts.size()), 3);
    for (int i = 0; i < m.rows; ++i) m.set_row3(i, verts[size_t(i)]);
    return {m, faces};
}

namespace {

void write_mat_block(std::ostream& os, const char* tag, const Mat& m) {
    os << tag << " " << m.rows << " " << m.cols << "\n";
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) os << (c ? " " : "") << format_double(m.at(r, c));
        os << "\n";
    }
}

}  // namespace

void write_sample_dump(const std::string& dir, const SyntheticSample& sample) {
    ensure_dir(dir);
    write_ppm(dir + "/image.ppm", sample.image);
    {
        std::ofstream f(dir + "/seed.txt");
        require(bool(f), "io-error", "cannot write " + dir + "/seed.txt");
        f << sample.seed << "\n";
    }
    std::ofstream f(dir + "/gt.txt");
    require(bool(f), "io-error", "cannot write " + dir + "/gt.txt");
    f << "sample-gt v1\n";
    f << "camera " << format_double(sample.camera.s) << " " << format_double(sample.camera.tx)
      << " " << format_double(sample.camera.ty) << "\n";
    write_mat_block(f, "coarse", sample.gt_coarse);
    write_mat_block(f, "dense", sample.gt_dense);
    write_mat_block(f, "joints3d", sample.gt_joints3d);
    write_mat_block(f, "joints2d", sample.gt_joints2d);
    f << "heatmaps " << sample.gt_heatmaps.n << " " << sample.gt_heatmaps.h << " "
      << sample.gt_heatmaps.w << "\n";
    // one "y x" active pixel per map, in map order
    for (int i = 0; i < sample.gt_heatmaps.n; ++i)
        for (int y = 0; y < sample.gt_heatmaps.h; ++y)
            for (int x = 0; x < sample.gt_heatmaps.w; ++x)
                if (sample.gt_heatmaps.at(i, y, x) == 1.0) f << y << " " << x << "\n";
    require(bool(f), "io-error", "short write on " + dir + "/gt.txt");
}

}  // namespace pointmesh
