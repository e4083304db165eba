"""The eight activity-concern categories, in canonical order."""

ACTIVITY_LABELS = (
    "CommutingToWork",
    "SchoolTrips",
    "ShoppingErrands",
    "SocialRecreational",
    "MedicalDental",
    "Evacuation",
    "OtherPurposes",
    "NonTravelStayHome",
)

DISPLAY_NAMES = {
    "CommutingToWork": "Commuting to Work",
    "SchoolTrips": "School Trips",
    "ShoppingErrands": "Shopping and Errands",
    "SocialRecreational": "Social and Recreational",
    "MedicalDental": "Medical and Dental Services",
    "Evacuation": "Evacuation",
    "OtherPurposes": "Other Purposes",
    "NonTravelStayHome": "Non-Travel",
}

NUM_CLASSES = len(ACTIVITY_LABELS)


def label_index(label) -> int:
    if isinstance(label, int):
        if not 0 <= label < NUM_CLASSES:
            raise ValueError(f"label index {label} out of range")
        return label
    try:
        return ACTIVITY_LABELS.index(label)
    except ValueError:
        raise ValueError(f"unknown activity label {label!r}") from None
