#pragma once

#include <span>
#include <string_view>

namespace comal::detail {

struct EmbeddedFile {
  std::string_view name;
  std::string_view content;
};

std::span<const EmbeddedFile> embedded_templates();
std::span<const EmbeddedFile> embedded_experiences();

}  // namespace comal::detail
