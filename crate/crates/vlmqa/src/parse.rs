//! Normalisation of free-text answers.

use depthvision_core::simgen::{Answer, ObjectClass, QaCategory};

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

/// Class names and synonyms, matched as whole words.
const LEXICON: [(&str, ObjectClass); 22] = [
    ("car", ObjectClass::Car),
    ("cars", ObjectClass::Car),
    ("automobile", ObjectClass::Car),
    ("automobiles", ObjectClass::Car),
    ("sedan", ObjectClass::Car),
    ("vehicle", ObjectClass::Car),
    ("suv", ObjectClass::Car),
    ("truck", ObjectClass::Truck),
    ("trucks", ObjectClass::Truck),
    ("lorry", ObjectClass::Truck),
    ("bus", ObjectClass::Truck),
    ("van", ObjectClass::Truck),
    ("pedestrian", ObjectClass::Pedestrian),
    ("pedestrians", ObjectClass::Pedestrian),
    ("person", ObjectClass::Pedestrian),
    ("people", ObjectClass::Pedestrian),
    ("man", ObjectClass::Pedestrian),
    ("woman", ObjectClass::Pedestrian),
    ("pole", ObjectClass::Pole),
    ("poles", ObjectClass::Pole),
    ("post", ObjectClass::Pole),
    ("bollard", ObjectClass::Pole),
];

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
}

fn number(word: &str) -> Option<u32> {
    if word.bytes().all(|b| b.is_ascii_digit()) {
        return word.parse().ok();
    }
    NUMBER_WORDS.iter().position(|&w| w == word).map(|n| n as u32)
}

/// Exist and Count take the first integer token (digits or a number word up
/// to twenty); Object takes the first lexicon word. `None` means no answer.
pub fn parse_answer(text: &str, category: QaCategory) -> Option<Answer> {
    match category {
        QaCategory::Exist | QaCategory::Count => words(text).find_map(|w| number(&w)).map(Answer::Number),
        QaCategory::Object => words(text)
            .find_map(|w| LEXICON.iter().find(|(name, _)| *name == w).map(|&(_, c)| c))
            .map(Answer::Class),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(parse_answer("There are 3 cars.", QaCategory::Count), Some(Answer::Number(3)));
        assert_eq!(parse_answer("I see two vehicles", QaCategory::Count), Some(Answer::Number(2)));
        assert_eq!(
            parse_answer("It appears to be a truck.", QaCategory::Object),
            Some(Answer::Class(ObjectClass::Truck))
        );
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_answer("Zero.", QaCategory::Exist), Some(Answer::Number(0)));
        assert_eq!(parse_answer("twenty", QaCategory::Exist), Some(Answer::Number(20)));
        assert_eq!(parse_answer("12 or 13", QaCategory::Count), Some(Answer::Number(12)));
        assert_eq!(parse_answer("None that I can see", QaCategory::Count), None);
        assert_eq!(parse_answer("", QaCategory::Count), None);
        // "someone" must not match "one"
        assert_eq!(parse_answer("someone", QaCategory::Count), None);
    }

    #[test]
    fn classes() {
        assert_eq!(
            parse_answer("An AUTOMOBILE, parked", QaCategory::Object),
            Some(Answer::Class(ObjectClass::Car))
        );
        assert_eq!(
            parse_answer("a person crossing", QaCategory::Object),
            Some(Answer::Class(ObjectClass::Pedestrian))
        );
        assert_eq!(parse_answer("carpet", QaCategory::Object), None);
        assert_eq!(parse_answer("3", QaCategory::Object), None);
    }

    #[test]
    fn display_round_trips() {
        for c in ObjectClass::ALL {
            let a = Answer::Class(c);
            assert_eq!(parse_answer(&a.to_string(), QaCategory::Object), Some(a));
        }
        for n in 0..=25 {
            let a = Answer::Number(n);
            assert_eq!(parse_answer(&a.to_string(), QaCategory::Count), Some(a));
        }
    }
}
