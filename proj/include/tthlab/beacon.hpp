#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tthlab/image.hpp"

namespace tth {

inline constexpr std::size_t kBeaconOrientationCells = 8;
inline constexpr const char* kDefaultBeaconPayload = "54726f6a616e";

// K x K grid of binary cells: 8 fixed orientation cells in the left and right
// columns of the first two and last two rows, one even-parity cell per row
// (the row's last free column), and payload bits row-major in the rest.
// A 1 cell renders white (255), a 0 cell black (0).
struct BeaconCode {
  std::size_t k = 8;
  std::vector<std::uint8_t> grid;          // k*k, row-major
  std::vector<std::uint8_t> payload_bits;  // capacity-length, zero padded
  std::vector<std::uint8_t> parity_bits;   // one per row
  Image rendered;                          // side x side x 3
};

struct BeaconDecode {
  std::vector<std::uint8_t> grid;
  std::vector<std::uint8_t> payload_bits;
  bool parity_ok = false;
  double cell_accuracy = 0.0;
  bool scannable = false;
};

enum class BeaconCell { Orientation, Parity, Payload };

BeaconCell beacon_cell_role(std::size_t k, std::size_t row, std::size_t col);
std::size_t beacon_capacity(std::size_t k);

// Two hex digits per byte, most significant bit first.
std::vector<std::uint8_t> bits_from_hex(std::string_view hex);

BeaconCode make_beacon(const std::vector<std::uint8_t>& payload_bits, std::size_t k,
                       std::size_t patch_side);

// Renders a grid as uniform blocks; pixel row y shows cell row y*k/side. Below
// k pixels some cells are skipped.
Image render_beacon_grid(const std::vector<std::uint8_t>& grid, std::size_t k, std::size_t side);

// Thresholds each cell's mean intensity at 127.5. With a reference, cell
// accuracy is measured against its grid and the payload must match it to
// count as scannable; without one, against the grid re-encoded from the
// decoded payload.
BeaconDecode decode_beacon(const Image& patch, std::size_t k,
                           const BeaconCode* reference = nullptr);

}  // namespace tth
