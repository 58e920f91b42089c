use thiserror::Error;

use super::Mention;
use crate::ids::{AgentId, TaskId};

/// Terminator token of the backend assignment format.
const TERMINATOR: &str = "EOF";
const ASSIGNMENT_PREFIX: &str = "Your task is ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MentionError {
    #[error("malformed mention `{0}`")]
    MalformedMention(String),
    #[error("not an assignment line: {0}")]
    NotAssignment(String),
}

/// Splits the leading run of whitespace-separated `@tokens` off `body`.
///
/// `@all` becomes [`Mention::Broadcast`] and `@human` [`Mention::Human`].
/// Duplicates keep their first position. An `@` later in the text is plain
/// text. The returned payload has the trailing `EOF` terminator removed.
pub fn parse_mentions(body: &str) -> Result<(Vec<Mention>, String), MentionError> {
    let mut mentions: Vec<Mention> = Vec::new();
    let mut rest = body.trim_start();
    while let Some(after_sigil) = rest.strip_prefix('@') {
        let end = after_sigil.find(char::is_whitespace).unwrap_or(after_sigil.len());
        let name = &after_sigil[..end];
        let mention = match name {
            "" => return Err(MentionError::MalformedMention("@".to_string())),
            "all" => Mention::Broadcast,
            "human" => Mention::Human,
            other => AgentId::new(other)
                .map(Mention::Agent)
                .map_err(|_| MentionError::MalformedMention(format!("@{other}")))?,
        };
        if !mentions.contains(&mention) {
            mentions.push(mention);
        }
        rest = after_sigil[end..].trim_start();
    }
    Ok((mentions, strip_terminator(rest).to_string()))
}

fn strip_terminator(text: &str) -> &str {
    let trimmed = text.trim_end();
    match trimmed.strip_suffix(TERMINATOR) {
        Some(head) if head.is_empty() || head.ends_with(char::is_whitespace) => head.trim_end(),
        _ => trimmed,
    }
}

/// Backend assignment line, e.g. `@Rover1 Your task is find_apples. EOF`.
pub fn assignment_line(agent: &AgentId, task: &TaskId) -> String {
    format!("@{agent} {ASSIGNMENT_PREFIX}{task}. {TERMINATOR}")
}

/// Inverse of [`assignment_line`]: exactly one agent mention followed by
/// `Your task is <task>.` and the terminator.
pub fn parse_assignment(body: &str) -> Result<(AgentId, TaskId), MentionError> {
    let not_assignment = || MentionError::NotAssignment(body.to_string());
    if !body.trim_end().ends_with(TERMINATOR) {
        return Err(not_assignment());
    }
    let (mentions, payload) = parse_mentions(body)?;
    let agent = match mentions.as_slice() {
        [Mention::Agent(agent)] => agent.clone(),
        _ => return Err(not_assignment()),
    };
    let task = payload
        .strip_prefix(ASSIGNMENT_PREFIX)
        .and_then(|rest| rest.strip_suffix('.'))
        .ok_or_else(not_assignment)?;
    let task = TaskId::new(task).map_err(|_| not_assignment())?;
    Ok((agent, task))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agent(name: &str) -> Mention {
        Mention::Agent(AgentId::new(name).unwrap())
    }

    #[test]
    fn assignment_format_example() {
        let (mentions, payload) = parse_mentions("@Rover1 Your task is find_apples. EOF").unwrap();
        assert_eq!(mentions, vec![agent("Rover1")]);
        assert_eq!(payload, "Your task is find_apples.");
    }

    #[test]
    fn no_sigil() {
        let (mentions, payload) = parse_mentions("hello team").unwrap();
        assert!(mentions.is_empty());
        assert_eq!(payload, "hello team");
    }

    #[test]
    fn duplicates_removed_keeping_first() {
        let (mentions, payload) = parse_mentions("@A @B @A go").unwrap();
        assert_eq!(mentions, vec![agent("A"), agent("B")]);
        assert_eq!(payload, "go");
    }

    #[test]
    fn broadcast_and_human_markers() {
        let (mentions, payload) = parse_mentions("@all @human stop and report").unwrap();
        assert_eq!(mentions, vec![Mention::Broadcast, Mention::Human]);
        assert_eq!(payload, "stop and report");
    }

    #[test]
    fn malformed_mentions() {
        assert!(matches!(parse_mentions("@ go"), Err(MentionError::MalformedMention(_))));
        assert!(matches!(parse_mentions("@"), Err(MentionError::MalformedMention(_))));
        assert!(matches!(parse_mentions("@A @"), Err(MentionError::MalformedMention(_))));
        assert!(matches!(
            parse_mentions("@a@b hi"),
            Err(MentionError::MalformedMention(_))
        ));
    }

    #[test]
    fn mid_sentence_sigil_is_text() {
        let (mentions, payload) = parse_mentions("meet @ noon with @Rover1").unwrap();
        assert!(mentions.is_empty());
        assert_eq!(payload, "meet @ noon with @Rover1");
    }

    #[test]
    fn terminator_only_stripped_as_token() {
        assert_eq!(parse_mentions("see REEOF").unwrap().1, "see REEOF");
        assert_eq!(parse_mentions("EOF").unwrap().1, "");
        assert_eq!(parse_mentions("done EOF  ").unwrap().1, "done");
    }

    #[test]
    fn assignment_round_trip() {
        let a = AgentId::new("Dog1").unwrap();
        let t = TaskId::new("search_tables").unwrap();
        let line = assignment_line(&a, &t);
        assert_eq!(line, "@Dog1 Your task is search_tables. EOF");
        assert_eq!(parse_assignment(&line).unwrap(), (a, t));
        assert!(parse_assignment("@Dog1 go fetch. EOF").is_err());
        assert!(parse_assignment("@Dog1 @Rover1 Your task is x. EOF").is_err());
        assert!(parse_assignment("@Dog1 Your task is x.").is_err());
    }

    /// Independent tokenizer: split on whitespace, collect leading `@`
    /// tokens, dedupe.
    fn reference_mentions(body: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for token in body.split_whitespace() {
            match token.strip_prefix('@') {
                Some(name) => {
                    if !out.iter().any(|n| n == name) {
                        out.push(name.to_string());
                    }
                }
                None => break,
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_reference_tokenizer(
            names in proptest::collection::vec("[A-Za-z][A-Za-z0-9_]{0,6}", 0..5),
            tail in "[a-z ]{0,20}",
            sep in "[ \t]{1,3}",
        ) {
            let mut body = String::new();
            for n in &names {
                body.push('@');
                body.push_str(n);
                body.push_str(&sep);
            }
            body.push_str(&tail);
            let (mentions, _) = parse_mentions(&body).unwrap();
            let got: Vec<String> = mentions
                .iter()
                .map(|m| match m {
                    Mention::Agent(a) => a.as_str().to_string(),
                    Mention::Broadcast => "all".to_string(),
                    Mention::Human => "human".to_string(),
                })
                .collect();
            prop_assert_eq!(got, reference_mentions(&body));
        }
    }
}
