#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include "hgllim/csv.hpp"
#include "hgllim/error.hpp"
#include "hgllim/hog.hpp"
#include "hgllim/netpbm.hpp"
#include "hgllim/pipeline.hpp"

namespace hgllim {

/// Generic dataset CSV: path, x, y, w, h, person, then one column per angle.
///
/// Relative image paths are resolved against the CSV's directory. Extra
/// angle columns can be restricted with `angles`; by default every column
/// after `person` is an angle.
inline PoseDataset read_pose_csv(const std::string& path, const std::vector<std::string>& angles = {}) {
    const csv::Table t = csv::read(path);
    for (const char* c : {"path", "x", "y", "w", "h", "person"}) t.column(c);
    std::vector<std::string> names = angles;
    if (names.empty()) {
        for (const auto& h : t.header)
            if (h != "path" && h != "x" && h != "y" && h != "w" && h != "h" && h != "person") names.push_back(h);
    }
    if (names.empty()) throw DataError(path + ": no angle columns");
    const Matrix box = csv::numeric(t, {"x", "y", "w", "h"});
    const Matrix ang = csv::numeric(t, names);
    const auto base = std::filesystem::path(path).parent_path();
    PoseDataset d;
    d.angle_names = names;
    const std::size_t pcol = t.column("path");
    const std::size_t person = t.column("person");
    for (std::size_t r = 0; r < t.size(); ++r) {
        PoseSample s;
        std::filesystem::path img = t.rows[r][pcol];
        s.image = img.is_absolute() ? img.string() : (base / img).string();
        const auto c = static_cast<Index>(r);
        s.box = {box(0, c), box(1, c), box(2, c), box(3, c)};
        if (!(s.box.w > 0.0) || !(s.box.h > 0.0))
            throw DataError(path + ": non-positive box size on line " + std::to_string(t.line[r]));
        s.angles = ang.col(c);
        s.person = t.rows[r][person];
        d.samples.push_back(std::move(s));
    }
    return d;
}

inline void write_pose_csv(const std::string& path, const PoseDataset& d) {
    csv::Writer w;
    std::vector<std::string> head = {"path", "x", "y", "w", "h", "person"};
    head.insert(head.end(), d.angle_names.begin(), d.angle_names.end());
    w.row(head);
    for (const auto& s : d.samples) {
        std::vector<std::string> row = {s.image, csv::format(s.box.x), csv::format(s.box.y), csv::format(s.box.w),
                                        csv::format(s.box.h), s.person};
        for (Index a = 0; a < s.angles.size(); ++a) row.push_back(csv::format(s.angles[a]));
        w.row(row);
    }
    w.save(path);
}

/// Parses the Prima naming scheme personneXXYZZ<tilt><pan>, e.g. personne01146-15+30.
struct PrimaName {
    std::string person;  // XX plus series Y
    double tilt = 0.0;
    double pan = 0.0;
};

inline std::optional<PrimaName> parse_prima_name(const std::string& stem) {
    static const std::regex re(R"(personne(\d{2})(\d)(\d{2})([+-]\d+)([+-]\d+))");
    std::smatch m;
    if (!std::regex_match(stem, m, re)) return std::nullopt;
    PrimaName n;
    n.person = m[1].str();
    n.tilt = std::stod(m[4].str());
    n.pan = std::stod(m[5].str());
    return n;
}

/// Reads a Prima annotation file: the last four integers are centre x, centre y, width, height.
inline Box read_prima_box(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    std::vector<double> nums;
    std::string tok;
    while (f >> tok) {
        double v = 0.0;
        if (csv::parse_double(tok, v)) nums.push_back(v);
    }
    if (nums.size() < 4) throw DataError(path + ": expected centre x, centre y, width, height");
    const double cx = nums[nums.size() - 4], cy = nums[nums.size() - 3];
    const double w = nums[nums.size() - 2], h = nums[nums.size() - 1];
    return {cx - w / 2.0, cy - h / 2.0, w, h};
}

/// Walks a Prima-style directory tree and returns the equivalent generic dataset
/// (angles "pitch" = tilt, "yaw" = pan; person = subject number, both series merged).
inline PoseDataset prima_dataset(const std::string& root) {
    PoseDataset d;
    d.angle_names = {"pitch", "yaw"};
    std::vector<std::filesystem::path> images;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (ext == ".jpg" || ext == ".JPG" || ext == ".jpeg" || ext == ".png" || ext == ".pgm" || ext == ".ppm")
            images.push_back(e.path());
    }
    std::sort(images.begin(), images.end());
    for (const auto& p : images) {
        const auto name = parse_prima_name(p.stem().string());
        if (!name) continue;
        auto txt = p;
        txt.replace_extension(".txt");
        if (!std::filesystem::exists(txt)) continue;
        PoseSample s;
        s.image = p.string();
        s.box = read_prima_box(txt.string());
        s.angles = Vector(2);
        s.angles << name->tilt, name->pan;
        s.person = name->person;
        d.samples.push_back(std::move(s));
    }
    if (d.samples.empty()) throw DataError(root + ": no Prima images with annotations found");
    return d;
}

using ImageDecoder = std::function<Image(const std::string&)>;

/// Decodes PGM/PPM natively; other formats need a decoder supplied by the caller.
inline Image load_image(const std::string& path, const ImageDecoder& fallback = {}) {
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm" || ext == ".PGM" || ext == ".PPM") return netpbm::read(path);
    if (fallback) return fallback(path);
    throw DataError(path + ": unsupported image format (only PGM/PPM without OpenCV)");
}

/// Feature source over a dataset's images: loads the image and extracts a
/// pyramid-HOG descriptor for every requested box.
class ImageFeatureSource {
public:
    explicit ImageFeatureSource(const PoseDataset& data, ImageDecoder decoder = {})
        : data_(&data), decoder_(std::move(decoder)) {}

    std::vector<std::optional<Vector>> operator()(std::size_t i, std::span<const Box> boxes) const {
        const Image img = load_image(data_->samples.at(i).image, decoder_);
        std::vector<std::optional<Vector>> out;
        for (const Box& b : boxes) {
            if (!b.intersects(img)) {
                out.emplace_back();
                continue;
            }
            out.emplace_back(extract_descriptor(img, b));
        }
        return out;
    }

private:
    const PoseDataset* data_;
    ImageDecoder decoder_;
};

}  // namespace hgllim
