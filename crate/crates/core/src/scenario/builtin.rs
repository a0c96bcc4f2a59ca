use super::{load_course, Course};

const BUILTINS: [(&str, &str); 2] = [
    ("robosoft2018", include_str!("../../courses/robosoft2018.json")),
    ("chavin", include_str!("../../courses/chavin.json")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(name, _)| *name)
}

/// Course file text of a built-in course.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn builtin(name: &str) -> Option<Course> {
    builtin_source(name).map(|text| load_course(text).expect("built-in courses are valid"))
}
