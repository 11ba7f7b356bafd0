#pragma once

#include <cstdint>
#include <string>

namespace mmlens {

enum class Family : uint8_t {
    ObjectAddition = 0,
    ObjectRemoval = 1,
    HumanCustomization = 2,
    ColorTransfer = 3,
    StyleTransfer = 4,
};

enum class Property : uint8_t { Color = 0, Style = 1, HumanIdentity = 2, SceneContent = 3 };

const char* family_name(Family f);
Family parse_family(const std::string& s);
const char* property_name(Property p);
Property parse_property(const std::string& s);
Property family_property(Family f);

} // namespace mmlens
