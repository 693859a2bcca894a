#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace maris::saim {

struct TemplateGroup {
  std::string name;
  std::vector<std::string> templates;
  friend bool operator==(const TemplateGroup&, const TemplateGroup&) = default;
};

/// Ordered template groups; ids are "<group>/<index>".
struct TemplateBank {
  std::vector<TemplateGroup> groups;

  std::vector<std::string> templates() const;
  std::vector<std::string> template_ids() const;
  std::size_t size() const;
  friend bool operator==(const TemplateBank&, const TemplateBank&) = default;
};

/// The built-in underwater bank: 6 groups x 10 templates.
TemplateBank build_prompt_bank();

/// Tab-separated "group<TAB>template" records after a header line.
std::string serialize_prompt_bank(const TemplateBank& bank);
TemplateBank parse_prompt_bank(std::string_view text);
TemplateBank load_prompt_bank(const std::string& path);

}  // namespace maris::saim
