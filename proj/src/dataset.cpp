#include "authnet/dataset.hpp"

#include <algorithm>

#include "authnet/error.hpp"

namespace authnet {

IdxDataset slice_dataset(const IdxDataset& ds, std::size_t start, std::size_t count) {
    if (start + count > ds.size())
        throw ValueError("slice_dataset: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds size " +
                         std::to_string(ds.size()));
    auto s = ds.sample_shape();
    const std::size_t stride = s[0] * s[1] * s[2];
    IdxDataset out;
    out.num_classes = ds.num_classes;
    out.images = Tensor({count, s[0], s[1], s[2]});
    out.labels.resize(count);
    std::copy(ds.images.data() + start * stride, ds.images.data() + (start + count) * stride,
              out.images.data());
    std::copy(ds.labels.begin() + static_cast<std::ptrdiff_t>(start),
              ds.labels.begin() + static_cast<std::ptrdiff_t>(start + count),
              out.labels.begin());
    return out;
}

IdxDataset gather_dataset(const IdxDataset& ds, const std::vector<std::size_t>& rows) {
    auto s = ds.sample_shape();
    const std::size_t stride = s[0] * s[1] * s[2];
    IdxDataset out;
    out.num_classes = ds.num_classes;
    out.images = Tensor({rows.size(), s[0], s[1], s[2]});
    out.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= ds.size())
            throw ValueError("gather_dataset: row " + std::to_string(rows[i]) +
                             " out of range");
        std::copy(ds.images.data() + rows[i] * stride,
                  ds.images.data() + (rows[i] + 1) * stride,
                  out.images.data() + i * stride);
        out.labels[i] = ds.labels[rows[i]];
    }
    return out;
}

Tensor single_image(const IdxDataset& ds, std::size_t index) {
    if (index >= ds.size())
        throw ValueError("single_image: index out of range");
    auto s = ds.sample_shape();
    const std::size_t stride = s[0] * s[1] * s[2];
    Tensor out({1, s[0], s[1], s[2]});
    std::copy(ds.images.data() + index * stride, ds.images.data() + (index + 1) * stride,
              out.data());
    return out;
}

} // namespace authnet
