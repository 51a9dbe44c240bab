//! Task prompt templates. Placeholders in square brackets are substituted
//! verbatim; nothing else in the text is altered.

pub const QA_PAIRS_PER_CONTEXT: usize = 5;
pub const SUMMARY_STYLES: [&str; 3] = ["bullet points", "paragraphs", "numbered lists"];

pub const CLOSED_QA_PROMPT: &str = "Generate 5 questions focusing on different aspects / parts of this given context. Use only the given context to create your questions. Do not use external information. <context>[context]</context> Ensure your output is in the format of a list of dictionaries, where each dictionary contains a 'question' key and an 'answer' key. Your output should be one line in the aforementioned format without anything else.";

pub const SUMMARIZATION_PROMPT: &str = "Generate a concise summary in [summary style] format of the following context related to [topic]: <context> [context] </context> Ensure your output is in the format of a dictionary with a 'summary' and 'instruction' key, where 'summary' is your summary in the specified format and 'instruction' is a sentence you would instruct someone to get this summary (for example: 'Please summarize in [summary style] format the following text passage'). Your output should be one line in the aforementioned format, and in the correct language without anything else.";

pub const CONVERSATION_PROMPT: &str = "Generate a conversation between a user and an AI assistant on the topic of [topic]. The user's message should be a question or a statement related to [topic], and the AI assistant should provide a relevant, engaging response to maintain a friendly and casual conversation. The output should be in the following format: <format>Input: User's message Output: AI assistant's response</format> Ensure your output contains ONLY ONE input-output pair exactly in the specified format without any additional text.";

pub const MULTIPLE_CHOICE_PROMPT: &str = "Generate a multiple-choice question focusing on the given context. The question should only have one correct choice. Use only the given context to create your question and answer choices. Do not use external information. <context>[context]</context> DO NOT USE any ordinal information (DO NOT USE eg: first answer is correct, all of the above is correct, etc) of the choices to answer your question as the choices will be shuffled later. Ensure your output is in the following format:<format> Question: Your question Choices: - [Choice 1] - [Choice 2] - [Choice 3] - [Choice 4] Answer: [Explaination + Reasoning + Correct Answer (in this order exactly)] </format> Your output should contain ONLY ONE multiple-choice question exactly in the specified format without any additional text.";

// Placeholders are replaced in one pass over the template so that a context
// containing "[topic]" is never substituted a second time.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    'outer: while let Some(i) = rest.find('[') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        for (name, value) in slots {
            let key = format!("[{name}]");
            if tail.starts_with(&key) {
                out.push_str(value);
                rest = &tail[key.len()..];
                continue 'outer;
            }
        }
        out.push('[');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

pub fn closed_qa(context: &str) -> String {
    fill(CLOSED_QA_PROMPT, &[("context", context)])
}

pub fn summarization(style: &str, topic: &str, context: &str) -> String {
    fill(
        SUMMARIZATION_PROMPT,
        &[
            ("summary style", style),
            ("topic", topic),
            ("context", context),
        ],
    )
}

pub fn conversation(topic: &str) -> String {
    fill(CONVERSATION_PROMPT, &[("topic", topic)])
}

pub fn multiple_choice(context: &str) -> String {
    fill(MULTIPLE_CHOICE_PROMPT, &[("context", context)])
}
