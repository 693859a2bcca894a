#include "maris/prompt_bank.hpp"

#include <fstream>
#include <sstream>

#include "maris/error.hpp"

namespace maris::saim {

TemplateBank build_prompt_bank() {
  return TemplateBank{{
      {"generic",
       {
           "a photo of a {}",
           "This is a photo of a {}",
           "There is a {} in the underwater scene",
           "a photo of a {} in {}",
           "a photo of a small {}",
           "a photo of a medium {}",
           "a photo of a large {}",
           "This is a photo of a small {}",
           "This is a photo of a medium {}",
           "This is a photo of a large {}",
       }},
      {"environment",
       {
           "a {} underwater",
           "a {} in the ocean",
           "a {} in the deep sea",
           "a {} near a coral reef",
           "a {} in murky underwater conditions",
           "a {} in a tropical sea",
           "a {} in a freshwater lake",
           "a {} in brackish water",
           "a {} in shallow coastal water",
           "a {} in open ocean water",
       }},
      {"medium/visibility",
       {
           "a {} in turbid blue-green water",
           "a {} in crystal-clear water",
           "a {} in highly murky water",
           "a {} in hazy underwater environment",
           "a {} in water filled with plankton",
           "a {} in low visibility conditions",
           "a {} in silted water",
           "a {} in cloudy water",
           "a {} in algae-rich water",
           "a {} in dark underwater conditions",
       }},
      {"lighting",
       {
           "a {} illuminated by artificial light underwater",
           "a {} glowing in bioluminescent light",
           "a {} under dim moonlight underwater",
           "a {} highlighted by a diver’s flashlight",
           "a {} glowing faintly in darkness",
           "a {} in high-contrast underwater light",
           "a {} in strong sunlight filtering from above",
           "a {} in shimmering caustics underwater",
           "a {} under soft ambient blue light",
           "a {} in backlit silhouette underwater",
       }},
      {"depth/distance",
       {
           "a {} at shallow depth near surface",
           "a {} at mesopelagic depth",
           "a {} at bathypelagic depth",
           "a {} in the hadal zone trench",
           "close-up of the {} underwater",
           "a {} seen from a distance underwater",
           "a {} disappearing into darkness",
           "a {} approaching the camera underwater",
           "a {} drifting into the distance",
           "a {} hovering at seabed depth",
       }},
      {"scene/interaction",
       {
           "a {} surrounded by bubbles",
           "a {} swimming with other fish underwater",
           "a {} near a diver underwater",
           "a {} next to an underwater vehicle",
           "a {} entangled in fishing net underwater",
           "a {} resting near coral",
           "a {} hiding under rocks",
           "a {} camouflaged in sand",
           "a {} gliding through seaweed",
           "a {} chasing prey underwater",
       }},
  }};
}

std::vector<std::string> TemplateBank::templates() const {
  std::vector<std::string> out;
  for (const auto& g : groups) out.insert(out.end(), g.templates.begin(), g.templates.end());
  return out;
}

std::vector<std::string> TemplateBank::template_ids() const {
  std::vector<std::string> out;
  for (const auto& g : groups)
    for (std::size_t i = 0; i < g.templates.size(); ++i)
      out.push_back(g.name + "/" + (i < 10 ? "0" : "") + std::to_string(i));
  return out;
}

std::size_t TemplateBank::size() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.templates.size();
  return n;
}

std::string serialize_prompt_bank(const TemplateBank& bank) {
  std::string out = "group\ttemplate\n";
  for (const auto& g : bank.groups)
    for (const auto& t : g.templates) out += g.name + "\t" + t + "\n";
  return out;
}

TemplateBank parse_prompt_bank(std::string_view text) {
  TemplateBank bank;
  std::size_t pos = 0, line_no = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (header) {
      if (line != "group\ttemplate")
        throw DataError("prompt bank: expected header 'group<TAB>template'");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos)
      throw DataError("prompt bank line " + std::to_string(line_no) + ": expected two fields");
    std::string group(line.substr(0, tab)), templ(line.substr(tab + 1));
    if (templ.find("{}") == std::string::npos)
      throw DataError("prompt bank line " + std::to_string(line_no) +
                      ": template has no \"{}\" placeholder: '" + templ + "'");
    if (bank.groups.empty() || bank.groups.back().name != group) {
      for (const auto& g : bank.groups)
        if (g.name == group)
          throw DataError("prompt bank line " + std::to_string(line_no) + ": group '" + group +
                          "' is not contiguous");
      bank.groups.push_back({group, {}});
    }
    bank.groups.back().templates.push_back(std::move(templ));
  }
  if (header) throw DataError("prompt bank: empty file");
  return bank;
}

TemplateBank load_prompt_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open prompt bank '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_prompt_bank(ss.str());
}

}  // namespace maris::saim
