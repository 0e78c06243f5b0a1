#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slm/numcore/tensor.hpp"

namespace slm::evalsuite {

/// Cosine similarity of every (audio embedding, text embedding) pair.
struct AlignmentMatrix {
    std::size_t rows = 0;  // audio embeddings
    std::size_t cols = 0;  // text tokens
    std::vector<double> values;
    std::string utterance_id;
    std::size_t stride_ms = 0;

    double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

/// values[i][j] = cos(audio_i, text_j); a zero vector gives 0.
AlignmentMatrix alignment_matrix(const Tensor<float>& audio, const Tensor<float>& text, std::string utterance_id = {},
                                 std::size_t stride_ms = 0);

/// Share of consecutive audio rows whose best-matching text column does not
/// move backwards.
double argmax_monotonicity(const AlignmentMatrix& m);

/// `stem`.csv (row-major, 6 decimals) and `stem`.pgm (8-bit P5, audio rows
/// top to bottom, [-1, 1] mapped linearly to [0, 255]).
struct HeatmapFiles {
    std::filesystem::path csv;
    std::filesystem::path pgm;
};
HeatmapFiles export_heatmap(const AlignmentMatrix& m, const std::filesystem::path& stem);

AlignmentMatrix read_heatmap_csv(const std::filesystem::path& path);

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};
GrayImage read_pgm(const std::filesystem::path& path);

std::uint8_t similarity_to_gray(double v);

} // namespace slm::evalsuite
