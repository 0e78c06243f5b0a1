#include "slm/evalsuite/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "slm/errors.hpp"

namespace slm::evalsuite {

AlignmentMatrix alignment_matrix(const Tensor<float>& audio, const Tensor<float>& text, std::string utterance_id,
                                 std::size_t stride_ms) {
    if (audio.cols() != text.cols())
        throw ShapeError("alignment: audio width " + std::to_string(audio.cols()) + " vs text width " +
                         std::to_string(text.cols()));
    AlignmentMatrix m;
    m.rows = audio.rows();
    m.cols = text.rows();
    m.utterance_id = std::move(utterance_id);
    m.stride_ms = stride_ms;
    m.values.resize(m.rows * m.cols);
    const std::size_t d = audio.cols();
    auto norm = [d](std::span<const float> v) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(v[k]) * v[k];
        return std::sqrt(s);
    };
    std::vector<double> text_norm(m.cols);
    for (std::size_t j = 0; j < m.cols; ++j) text_norm[j] = norm(text.row(j));
    for (std::size_t i = 0; i < m.rows; ++i) {
        const auto a = audio.row(i);
        const double na = norm(a);
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (na == 0.0 || text_norm[j] == 0.0) continue;
            const auto t = text.row(j);
            double dot = 0;
            for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(a[k]) * t[k];
            m.values[i * m.cols + j] = std::clamp(dot / (na * text_norm[j]), -1.0, 1.0);
        }
    }
    return m;
}

double argmax_monotonicity(const AlignmentMatrix& m) {
    if (m.rows < 2 || m.cols == 0) return 1.0;
    std::vector<std::size_t> best(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const auto* row = m.values.data() + i * m.cols;
        best[i] = static_cast<std::size_t>(std::max_element(row, row + m.cols) - row);
    }
    std::size_t ok = 0;
    for (std::size_t i = 1; i < m.rows; ++i) ok += best[i] >= best[i - 1];
    return static_cast<double>(ok) / static_cast<double>(m.rows - 1);
}

std::uint8_t similarity_to_gray(double v) {
    const double g = std::round((std::clamp(v, -1.0, 1.0) + 1.0) / 2.0 * 255.0);
    return static_cast<std::uint8_t>(g);
}

HeatmapFiles export_heatmap(const AlignmentMatrix& m, const std::filesystem::path& stem) {
    HeatmapFiles files{std::filesystem::path(stem.string() + ".csv"), std::filesystem::path(stem.string() + ".pgm")};
    {
        std::ofstream os(files.csv);
        if (!os) throw InputError("cannot write " + files.csv.string());
        char buf[32];
        for (std::size_t i = 0; i < m.rows; ++i) {
            for (std::size_t j = 0; j < m.cols; ++j) {
                std::snprintf(buf, sizeof buf, "%.6f", m.at(i, j));
                os << (j ? "," : "") << buf;
            }
            os << '\n';
        }
        if (!os) throw InputError("failed writing " + files.csv.string());
    }
    {
        std::ofstream os(files.pgm, std::ios::binary);
        if (!os) throw InputError("cannot write " + files.pgm.string());
        os << "P5\n" << m.cols << ' ' << m.rows << "\n255\n";
        for (double v : m.values) os.put(static_cast<char>(similarity_to_gray(v)));
        if (!os) throw InputError("failed writing " + files.pgm.string());
    }
    return files;
}

AlignmentMatrix read_heatmap_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path.string());
    AlignmentMatrix m;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t cols = 0;
        while (std::getline(ss, cell, ',')) {
            m.values.push_back(std::stod(cell));
            ++cols;
        }
        if (m.rows == 0) m.cols = cols;
        else if (cols != m.cols) throw DataError(path.string() + ": ragged row " + std::to_string(m.rows + 1));
        ++m.rows;
    }
    return m;
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path.string());
    std::string magic;
    int maxval = 0;
    GrayImage img;
    is >> magic >> img.width >> img.height >> maxval;
    if (magic != "P5" || maxval != 255) throw DataError(path.string() + ": not an 8-bit P5 image");
    is.get();
    img.pixels.resize(img.width * img.height);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) throw DataError(path.string() + ": truncated");
    return img;
}

} // namespace slm::evalsuite
