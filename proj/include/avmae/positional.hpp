#pragma once

#include <cmath>
#include <vector>

#include "avmae/errors.hpp"
#include "avmae/tensor.hpp"

namespace avmae {

// Fixed (non-learned) sinusoidal table: row p holds
// [sin(p/10000^(0/d)), cos(p/10000^(0/d)), sin(p/10000^(2/d)), ...].
inline Tensor sinusoidal_table(size_t positions, size_t dim) {
    if (dim % 2 != 0) {
        throw ConfigError("positional embedding dimension must be even, got " +
                          std::to_string(dim));
    }
    Tensor t = Tensor::zeros({positions, dim});
    for (size_t p = 0; p < positions; ++p) {
        for (size_t i = 0; i < dim / 2; ++i) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
            const double angle = static_cast<double>(p) * freq;
            t.at(p, 2 * i) = std::sin(angle);
            t.at(p, 2 * i + 1) = std::cos(angle);
        }
    }
    return t;
}

// Deterministic positional embeddings over a patch grid. Audio grids (2 axes)
// use a plain 1d table over the flattened grid index; video grids (3 axes)
// sum a temporal table and a spatial table over the flattened (h, w) index.
struct PositionalEmbedding {
    enum class Kind { sinusoidal_1d_grid, separable_spatiotemporal };
    Kind kind = Kind::sinusoidal_1d_grid;
    Tensor table;  // [num_positions x dim]

    static PositionalEmbedding for_grid(const std::vector<size_t>& grid_dims, size_t dim) {
        PositionalEmbedding pe;
        if (grid_dims.size() == 2) {
            pe.kind = Kind::sinusoidal_1d_grid;
            pe.table = sinusoidal_table(grid_dims[0] * grid_dims[1], dim);
        } else if (grid_dims.size() == 3) {
            pe.kind = Kind::separable_spatiotemporal;
            const size_t gt = grid_dims[0];
            const size_t spatial = grid_dims[1] * grid_dims[2];
            Tensor temporal = sinusoidal_table(gt, dim);
            Tensor space = sinusoidal_table(spatial, dim);
            pe.table = Tensor::zeros({gt * spatial, dim});
            for (size_t t = 0; t < gt; ++t) {
                for (size_t s = 0; s < spatial; ++s) {
                    for (size_t j = 0; j < dim; ++j) {
                        pe.table.at(t * spatial + s, j) = temporal.at(t, j) + space.at(s, j);
                    }
                }
            }
        } else {
            throw ConfigError("positional embedding needs a 2- or 3-axis grid, got " +
                              std::to_string(grid_dims.size()) + " axes");
        }
        return pe;
    }
};

}  // namespace avmae
