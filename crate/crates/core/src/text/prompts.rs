use serde::{Deserialize, Serialize};

pub const PROMPTS_PER_CLASS: usize = 30;

/// Zero-shot prompt templates; `{label}` is replaced by the class name.
pub const PROMPT_TEMPLATES: [&str; PROMPTS_PER_CLASS] = [
    "A period of {label} was observed during the session.",
    "Detected a phase of {label}.",
    "Data shows {label} took place",
    "The main action was {label}",
    "{label} was detected during the observed period.",
    "The user had a period of {label}.",
    "{label} recorded during the day.",
    "A {label} episode occurred.",
    "{label} was recorded.",
    "Identified {label} across the timeframe.",
    "Observed {label} activity.",
    "Period of {label} noted.",
    "{label} occurred.",
    "User engaged in {label}.",
    "{label} took place during the recorded minutes.",
    "Observed {label} spanning several minutes.",
    "An instance of {label} was identified.",
    "A continuous {label} phase.",
    "Detection of {label} activity.",
    "A {label} period.",
    "The activity was {label}.",
    "This day includes {label}.",
    "The person performed {label}.",
    "Sensor data indicates {label}.",
    "A session of {label} was logged.",
    "{label} activity was identified in the data.",
    "The wearer was doing {label}.",
    "Signals consistent with {label} were recorded.",
    "An episode of {label} appears in the record.",
    "The recording captures {label}.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub class_label: String,
    pub prompts: Vec<String>,
}

pub fn make_prompt_set(class_label: &str) -> PromptSet {
    PromptSet {
        class_label: class_label.to_string(),
        prompts: PROMPT_TEMPLATES.iter().map(|t| t.replace("{label}", class_label)).collect(),
    }
}
