#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mmpkd {

// Incremental SHA-256; hex() finalizes.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::uint8_t> bytes);
    void update(std::string_view s);
    std::string hex();

private:
    void* ctx_;
};

std::string sha256_hex(std::string_view s);

}  // namespace mmpkd
