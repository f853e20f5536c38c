#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "authnet/tensor.hpp"

namespace authnet {

// Labeled image set. Images are [N,C,H,W] with values in [0,1].
struct IdxDataset {
    Tensor images;
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::array<std::size_t, 3> sample_shape() const {
        return {images.extent(1), images.extent(2), images.extent(3)};
    }
};

// Copies samples [start, start+count) into a new dataset.
IdxDataset slice_dataset(const IdxDataset& ds, std::size_t start, std::size_t count);

// Copies the given rows (used for seeded subsamples).
IdxDataset gather_dataset(const IdxDataset& ds, const std::vector<std::size_t>& rows);

// One [1,C,H,W] batch view of a single sample (copy).
Tensor single_image(const IdxDataset& ds, std::size_t index);

} // namespace authnet
