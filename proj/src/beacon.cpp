#include "tthlab/beacon.hpp"

#include "tthlab/error.hpp"

namespace tth {

namespace {

void check_grid_size(std::size_t k) {
  if (k < 4) raise(ErrorKind::Config, "beacon grid must be at least 4x4");
}

std::size_t parity_column(std::size_t k, std::size_t row) {
  const bool edge_row = row < 2 || row + 2 >= k;
  return edge_row ? k - 2 : k - 1;
}

std::uint8_t orientation_bit(std::size_t k, std::size_t row, std::size_t col) {
  const bool left = col == 0;
  if (row == 0) return 1;
  if (row == 1) return left ? 1 : 0;
  if (row == k - 2) return left ? 1 : 0;
  return 0;
}

std::vector<std::uint8_t> assemble_grid(const std::vector<std::uint8_t>& payload, std::size_t k,
                                        std::vector<std::uint8_t>* parity_out) {
  std::vector<std::uint8_t> grid(k * k, 0);
  std::size_t next = 0;
  for (std::size_t r = 0; r < k; ++r) {
    std::uint8_t parity = 0;
    for (std::size_t c = 0; c < k; ++c) {
      switch (beacon_cell_role(k, r, c)) {
        case BeaconCell::Orientation: grid[r * k + c] = orientation_bit(k, r, c); break;
        case BeaconCell::Payload:
          grid[r * k + c] = payload[next++];
          parity ^= grid[r * k + c];
          break;
        case BeaconCell::Parity: break;
      }
    }
    grid[r * k + parity_column(k, r)] = parity;
    if (parity_out) parity_out->push_back(parity);
  }
  return grid;
}

}  // namespace

BeaconCell beacon_cell_role(std::size_t k, std::size_t row, std::size_t col) {
  const bool edge_row = row < 2 || row + 2 >= k;
  if (edge_row && (col == 0 || col == k - 1)) return BeaconCell::Orientation;
  if (col == parity_column(k, row)) return BeaconCell::Parity;
  return BeaconCell::Payload;
}

std::size_t beacon_capacity(std::size_t k) {
  check_grid_size(k);
  return k * k - k - kBeaconOrientationCells;
}

std::vector<std::uint8_t> bits_from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) raise(ErrorKind::Config, "beacon payload hex must have an even number of digits");
  std::vector<std::uint8_t> bits;
  bits.reserve(hex.size() * 4);
  for (char ch : hex) {
    int v = -1;
    if (ch >= '0' && ch <= '9') v = ch - '0';
    else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
    else if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
    if (v < 0) raise(ErrorKind::Config, "invalid hex digit in beacon payload '" + std::string(hex) + "'");
    for (int b = 3; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((v >> b) & 1));
  }
  return bits;
}

Image render_beacon_grid(const std::vector<std::uint8_t>& grid, std::size_t k, std::size_t side) {
  check_grid_size(k);
  if (grid.size() != k * k) raise(ErrorKind::Dimension, "beacon grid must have k*k cells");
  if (side == 0) raise(ErrorKind::Dimension, "beacon side must be positive");
  Image img({side, side, 3});
  for (std::size_t y = 0; y < side; ++y) {
    const std::size_t r = y * k / side;
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t c = x * k / side;
      const double v = grid[r * k + c] ? 255.0 : 0.0;
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = v;
    }
  }
  return img;
}

BeaconCode make_beacon(const std::vector<std::uint8_t>& payload_bits, std::size_t k,
                       std::size_t patch_side) {
  const std::size_t cap = beacon_capacity(k);
  if (payload_bits.size() > cap) {
    raise(ErrorKind::Config, "beacon payload of " + std::to_string(payload_bits.size()) +
                                 " bits exceeds the " + std::to_string(cap) + "-bit capacity");
  }
  if (patch_side < 2 * k) {
    raise(ErrorKind::Config, "patch side " + std::to_string(patch_side) + " too small for a " +
                                 std::to_string(k) + "x" + std::to_string(k) + " beacon");
  }
  BeaconCode code;
  code.k = k;
  code.payload_bits.assign(cap, 0);
  for (std::size_t i = 0; i < payload_bits.size(); ++i) {
    if (payload_bits[i] > 1) raise(ErrorKind::Config, "payload bits must be 0 or 1");
    code.payload_bits[i] = payload_bits[i];
  }
  code.grid = assemble_grid(code.payload_bits, k, &code.parity_bits);
  code.rendered = render_beacon_grid(code.grid, k, patch_side);
  return code;
}

BeaconDecode decode_beacon(const Image& patch, std::size_t k, const BeaconCode* reference) {
  check_grid_size(k);
  if (patch.height() < k || patch.width() < k) {
    raise(ErrorKind::Dimension, "patch " + patch.shape().to_string() + " cannot hold a " + std::to_string(k) + "x" + std::to_string(k) + " grid");
  }
  if (reference && reference->k != k) raise(ErrorKind::Dimension, "reference beacon has a different grid size");
  const std::size_t h = patch.height(), w = patch.width(), ch = patch.channels();
  std::vector<double> sums(k * k, 0.0);
  std::vector<std::size_t> counts(k * k, 0);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t r = y * k / h;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t c = x * k / w;
      for (std::size_t j = 0; j < ch; ++j) sums[r * k + c] += patch.at(y, x, j);
      counts[r * k + c] += ch;
    }
  }
  BeaconDecode out;
  out.grid.resize(k * k);
  for (std::size_t i = 0; i < k * k; ++i) {
    out.grid[i] = sums[i] / static_cast<double>(counts[i]) > 127.5 ? 1 : 0;
  }
  out.parity_ok = true;
  for (std::size_t r = 0; r < k; ++r) {
    std::uint8_t parity = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const auto role = beacon_cell_role(k, r, c);
      if (role == BeaconCell::Payload) {
        out.payload_bits.push_back(out.grid[r * k + c]);
        parity ^= out.grid[r * k + c];
      } else if (role == BeaconCell::Parity) {
        parity ^= out.grid[r * k + c];
      }
    }
    if (parity != 0) out.parity_ok = false;
  }
  const std::vector<std::uint8_t> expected =
      reference ? reference->grid : assemble_grid(out.payload_bits, k, nullptr);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < k * k; ++i) matches += out.grid[i] == expected[i];
  out.cell_accuracy = static_cast<double>(matches) / static_cast<double>(k * k);
  out.scannable = out.parity_ok && (!reference || out.payload_bits == reference->payload_bits);
  return out;
}

}  // namespace tth
